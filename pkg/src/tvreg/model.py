"""Model assembly: turn a parsed formula plus data columns into arrays.

A built model keeps the response, one design matrix per coefficient block
(time-invariant, first-order walk, second-order walk) and the prior
hyperparameters needed by the likelihood code.  Time-invariant coefficients
are handled downstream as states whose transition noise is identically zero,
so the whole model stays a single linear-Gaussian state-space problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import log_ndtr

from .errors import (
    BadExposureError,
    BadGammaError,
    DuplicateTermError,
    LengthMismatchError,
    NegativeCountError,
    NonNumericColumnError,
    UnknownColumnError,
)
from .formula import FormulaAst

_LOG_2PI = math.log(2.0 * math.pi)

INTERCEPT_NAME = "intercept"


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of data, block layout and priors for one model.

    Shapes: ``y`` is (T,) with NaN marking missing observations; the design
    matrices are (T, p_fixed), (T, p_rw1) and (T, p_rw2).  ``beta1_priors``
    holds one (mean, sd) row per coefficient in block order (fixed, rw1,
    rw2); ``sigma_priors`` one row per noise sd (observation sd first for the
    Gaussian family, then rw1 walks, then rw2 walks); ``nu1_priors`` one row
    per rw2 coefficient's initial slope.  ``gamma`` optionally rescales the
    rw1 noise sd at each time (T, p_rw1).  ``exposure`` is the positive
    offset u_t for count responses.
    """

    y: np.ndarray
    X_fixed: np.ndarray
    X_rw1: np.ndarray
    X_rw2: np.ndarray
    beta1_priors: np.ndarray
    sigma_priors: np.ndarray
    nu1_priors: np.ndarray
    family: str = "gaussian"
    exposure: np.ndarray | None = None
    gamma: np.ndarray | None = None
    response_name: str = "y"
    fixed_names: tuple[str, ...] = ()
    rw1_names: tuple[str, ...] = ()
    rw2_names: tuple[str, ...] = ()

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def p_fixed(self) -> int:
        return self.X_fixed.shape[1]

    @property
    def p_rw1(self) -> int:
        return self.X_rw1.shape[1]

    @property
    def p_rw2(self) -> int:
        return self.X_rw2.shape[1]

    @property
    def n_coef(self) -> int:
        return self.p_fixed + self.p_rw1 + self.p_rw2

    @property
    def state_dim(self) -> int:
        # each rw2 coefficient carries a companion slope state
        return self.p_fixed + self.p_rw1 + 2 * self.p_rw2

    @property
    def n_sigma(self) -> int:
        return (1 if self.family == "gaussian" else 0) + self.p_rw1 + self.p_rw2

    @property
    def sigma_names(self) -> tuple[str, ...]:
        names = ("sigma_y",) if self.family == "gaussian" else ()
        return names + tuple(f"sigma_{t}" for t in self.rw1_names + self.rw2_names)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.y)

    def gamma_matrix(self) -> np.ndarray:
        """Per-time rw1 noise-sd multipliers, (T, p_rw1); ones if unset."""
        if self.gamma is None:
            return np.ones((self.n_obs, self.p_rw1))
        return self.gamma

    def exposure_vector(self) -> np.ndarray:
        if self.exposure is None:
            return np.ones(self.n_obs)
        return self.exposure


@dataclass(frozen=True)
class SigmaVector:
    """Noise sds for one posterior point, split by role.

    ``sigma_eps`` is the observation sd (None for count families);
    ``sigma_rw1``/``sigma_rw2`` hold one walk-noise sd per time-varying
    coefficient, in declaration order.
    """

    sigma_eps: float | None
    sigma_rw1: np.ndarray
    sigma_rw2: np.ndarray

    @classmethod
    def from_array(cls, spec: ModelSpec, values: np.ndarray) -> "SigmaVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (spec.n_sigma,):
            raise ValueError(
                f"expected {spec.n_sigma} sigma values, got shape {values.shape}"
            )
        has_eps = spec.family == "gaussian"
        eps = float(values[0]) if has_eps else None
        off = 1 if has_eps else 0
        return cls(
            sigma_eps=eps,
            sigma_rw1=values[off : off + spec.p_rw1],
            sigma_rw2=values[off + spec.p_rw1 :],
        )

    def to_array(self) -> np.ndarray:
        head = [] if self.sigma_eps is None else [self.sigma_eps]
        return np.concatenate([head, self.sigma_rw1, self.sigma_rw2])


def _column(data, name: str, formula_text: str = "") -> np.ndarray:
    try:
        raw = data[name]
    except KeyError:
        raise UnknownColumnError(f"column {name!r} not found in the data") from None
    arr = np.asarray(raw)
    if arr.dtype == object or arr.dtype.kind in "USM":
        # try a numeric coercion treating empty strings as missing
        def conv(v):
            if v is None:
                return np.nan
            if isinstance(v, str) and v.strip() == "":
                return np.nan
            return float(v)

        try:
            arr = np.array([conv(v) for v in arr], dtype=float)
        except (TypeError, ValueError):
            raise NonNumericColumnError(f"column {name!r} is not numeric") from None
    else:
        arr = arr.astype(float)
    if arr.ndim != 1:
        raise NonNumericColumnError(f"column {name!r} is not one-dimensional")
    return arr


def _design_matrix(data, names, intercept: bool, n_obs: int, kind: str):
    cols = []
    labels = []
    if intercept:
        cols.append(np.ones(n_obs))
        labels.append(INTERCEPT_NAME)
    for name in names:
        col = _column(data, name)
        if col.shape[0] != n_obs:
            raise LengthMismatchError(
                f"column {name!r} has length {col.shape[0]}, expected {n_obs}"
            )
        if np.isnan(col).any():
            raise NonNumericColumnError(
                f"{kind} column {name!r} has missing values; predictors must be complete"
            )
        cols.append(col)
        labels.append(name)
    X = np.column_stack(cols) if cols else np.empty((n_obs, 0))
    return X, tuple(labels)


def build_model(
    ast: FormulaAst,
    data: Mapping[str, "np.typing.ArrayLike"],
    family: str = "gaussian",
    exposure: str | None = None,
    gamma: Mapping[str, str] | None = None,
    sigma_y_prior: tuple[float, float] = (0.0, 10.0),
    nu1_prior: tuple[float, float] = (0.0, 10.0),
) -> ModelSpec:
    """Bind a parsed formula to data columns.

    Parameters
    ----------
    ast : FormulaAst
        Output of :func:`tvreg.formula.parse_formula`.
    data : mapping of column name to 1-D array-like
        Anything indexable by column name works, including a pandas
        ``DataFrame``.  The response may contain NaN (missing); predictors,
        exposure and gamma columns must be complete.
    family : {"gaussian", "poisson"}
    exposure : str, optional
        Column of positive offsets u_t; count family only.
    gamma : mapping, optional
        ``{rw1_term: column}`` binding a positive per-time multiplier for
        that coefficient's walk-noise sd.
    sigma_y_prior, nu1_prior : (mean, sd)
        Priors not expressible in the formula text: the zero-truncated
        normal on the observation sd, and the normal on each rw2 initial
        slope.
    """
    if family not in ("gaussian", "poisson"):
        raise ValueError(f"unknown family {family!r}")

    y = _column(data, ast.response)
    n_obs = y.shape[0]
    if n_obs == 0:
        raise LengthMismatchError("the data has no rows")
    observed = ~np.isnan(y)
    if family == "poisson":
        vals = y[observed]
        if ((vals < 0) | (vals != np.round(vals))).any():
            raise NegativeCountError(
                "count responses must be non-negative integers where observed"
            )

    X_fixed, fixed_names = _design_matrix(
        data, ast.fixed_terms, ast.intercept_fixed, n_obs, "fixed"
    )
    rw1_X, rw1_names, rw1_beta, rw1_sigma = [], [], [], []
    for blk in ast.rw1_blocks:
        X, labels = _design_matrix(data, blk.terms, blk.intercept, n_obs, "rw1")
        rw1_X.append(X)
        rw1_names.extend(labels)
        rw1_beta += [blk.beta_prior] * len(labels)
        rw1_sigma += [blk.sigma_prior] * len(labels)
    rw2_X, rw2_names, rw2_beta, rw2_sigma = [], [], [], []
    for blk in ast.rw2_blocks:
        X, labels = _design_matrix(data, blk.terms, blk.intercept, n_obs, "rw2")
        rw2_X.append(X)
        rw2_names.extend(labels)
        rw2_beta += [blk.beta_prior] * len(labels)
        rw2_sigma += [blk.sigma_prior] * len(labels)
    X_rw1 = np.hstack(rw1_X) if rw1_X else np.empty((n_obs, 0))
    X_rw2 = np.hstack(rw2_X) if rw2_X else np.empty((n_obs, 0))

    all_names = list(fixed_names) + rw1_names + rw2_names
    if len(set(all_names)) != len(all_names):
        # e.g. a data column literally named like the intercept label
        raise DuplicateTermError("coefficient labels collide: " + ", ".join(all_names))

    fixed_beta = [(0.0, 10.0)] * len(fixed_names)
    beta1_priors = np.array(fixed_beta + rw1_beta + rw2_beta, dtype=float).reshape(-1, 2)

    sigma_rows = ([sigma_y_prior] if family == "gaussian" else []) + rw1_sigma + rw2_sigma
    sigma_priors = np.array(sigma_rows, dtype=float).reshape(-1, 2)
    nu1_priors = np.array([nu1_prior] * len(rw2_names), dtype=float).reshape(-1, 2)

    exposure_arr = None
    if exposure is not None:
        if family != "poisson":
            raise BadExposureError("exposure only applies to the poisson family")
        exposure_arr = _column(data, exposure)
        if exposure_arr.shape[0] != n_obs:
            raise LengthMismatchError(
                f"exposure column {exposure!r} has length {exposure_arr.shape[0]}, "
                f"expected {n_obs}"
            )
        if not np.isfinite(exposure_arr).all() or (exposure_arr <= 0).any():
            raise BadExposureError(
                f"exposure column {exposure!r} must be strictly positive and finite"
            )

    gamma_arr = None
    if gamma:
        gamma_arr = np.ones((n_obs, len(rw1_names)))
        for term, colname in gamma.items():
            if term not in rw1_names:
                raise UnknownColumnError(
                    f"gamma binding names {term!r}, which is not an rw1 coefficient"
                )
            col = _column(data, colname)
            if col.shape[0] != n_obs:
                raise LengthMismatchError(
                    f"gamma column {colname!r} has length {col.shape[0]}, expected {n_obs}"
                )
            if not np.isfinite(col).all() or (col <= 0).any():
                raise BadGammaError(
                    f"gamma column {colname!r} must be strictly positive and finite"
                )
            gamma_arr[:, rw1_names.index(term)] = col

    for arr in (y, X_fixed, X_rw1, X_rw2, beta1_priors, sigma_priors, nu1_priors,
                exposure_arr, gamma_arr):
        if arr is not None:
            arr.setflags(write=False)

    return ModelSpec(
        y=y,
        X_fixed=X_fixed,
        X_rw1=X_rw1,
        X_rw2=X_rw2,
        beta1_priors=beta1_priors,
        sigma_priors=sigma_priors,
        nu1_priors=nu1_priors,
        family=family,
        exposure=exposure_arr,
        gamma=gamma_arr,
        response_name=ast.response,
        fixed_names=fixed_names,
        rw1_names=tuple(rw1_names),
        rw2_names=tuple(rw2_names),
    )


def as_sigma_vector(spec: ModelSpec, sigma) -> SigmaVector:
    if isinstance(sigma, SigmaVector):
        return sigma
    return SigmaVector.from_array(spec, np.asarray(sigma, dtype=float))


def log_prior(spec: ModelSpec, sigma) -> float:
    """Log density of the noise sds under independent zero-truncated normals.

    Each component i with hyperparameters (m_i, s_i) contributes the normal
    log pdf at sigma_i plus the truncation normalizer -log P(N(m_i, s_i^2) >= 0).
    Returns -inf if any component is negative.
    """
    values = as_sigma_vector(spec, sigma).to_array()
    if (values < 0).any() or not np.isfinite(values).all():
        return -math.inf
    mean = spec.sigma_priors[:, 0]
    sd = spec.sigma_priors[:, 1]
    z = (values - mean) / sd
    logpdf = -0.5 * (_LOG_2PI + z * z) - np.log(sd)
    # P(X >= 0) for X ~ N(mean, sd^2) is Phi(mean/sd)
    log_norm = log_ndtr(mean / sd)
    return float(np.sum(logpdf - log_norm))
