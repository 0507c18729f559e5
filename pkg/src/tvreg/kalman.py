"""Univariate Kalman filtering and smoothing for the coefficient-walk model.

The state vector stacks, in declaration order, the time-invariant
coefficients, the first-order-walk coefficients, and for each
second-order-walk coefficient a (level, slope) pair:

    state = [fixed..., rw1..., (rw2_level, rw2_slope)...]

Time-invariant coefficients are random-walk states with zero transition
noise.  Because each time step carries a single observation, the filter uses
the scalar-innovation recursions: with prediction x_t = E[state_t | y_{1:t-1}]
and covariance P_t,

    v_t = y_t - Z_t x_t,            F_t = Z_t P_t Z_t' + H_t,
    x_{t|t} = x_t + P_t Z_t' v_t / F_t,
    P_{t|t} = P_t - P_t Z_t' Z_t P_t / F_t,
    x_{t+1} = T x_{t|t},            P_{t+1} = T P_{t|t} T' + R Q_t R',

contributing -(log 2*pi + log F_t + v_t^2 / F_t) / 2 to the log likelihood.
Missing observations skip the update step.  The smoother is the standard
backward r/N pass producing E[state_t | y_{1:T}] and its covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalBreakdownError
from .model import ModelSpec, SigmaVector, as_sigma_vector

_LOG_2PI = math.log(2.0 * math.pi)

# F below this is treated as an effective -inf likelihood rather than an error
_F_TINY = 1e-300


@dataclass
class StateSpace:
    """Arrays defining one linear-Gaussian filtering problem.

    ``Z`` is (T, m); ``Tmat`` (m, m); ``R`` (m, k) selects the k states that
    receive transition noise with per-time variances ``Q`` (T, k); ``H`` (T,)
    holds observation-noise variances; ``a1``/``P1diag`` give the mean and
    diagonal covariance of the initial state.  ``qdiag`` is Q scattered onto
    the full state diagonal, i.e. the diagonal of R Q_t R'.
    """

    Z: np.ndarray
    Tmat: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    a1: np.ndarray
    P1diag: np.ndarray
    noisy_idx: np.ndarray
    tmat_identity: bool
    qdiag: np.ndarray = field(init=False)

    def __post_init__(self):
        T_len = self.Z.shape[0]
        self.qdiag = np.zeros((T_len, self.m))
        if self.noisy_idx.size:
            self.qdiag[:, self.noisy_idx] = self.Q

    @property
    def m(self) -> int:
        return self.Z.shape[1]

    @property
    def n_obs(self) -> int:
        return self.Z.shape[0]

    @property
    def P1(self) -> np.ndarray:
        return np.diag(self.P1diag)


@dataclass
class KalmanOutput:
    """Filter (and optionally smoother) moments for one pass.

    When ``loglik`` is -inf the moment arrays are not meaningful.  ``v``/``F``
    are innovations and their variances (v is NaN at missing times); the
    ``*_pred`` arrays hold one-step-ahead moments, ``*_filt`` the updated
    ones, and ``*_smooth`` the full-sample ones (None unless smoothing ran).
    """

    loglik: float
    v: np.ndarray
    F: np.ndarray
    a_pred: np.ndarray
    P_pred: np.ndarray
    a_filt: np.ndarray
    P_filt: np.ndarray
    a_smooth: np.ndarray | None = None
    P_smooth: np.ndarray | None = None


def design_rows(spec: ModelSpec) -> np.ndarray:
    """The (T, m) observation rows Z_t implied by a model's design matrices."""
    T_len, m = spec.n_obs, spec.state_dim
    Z = np.zeros((T_len, m))
    j = 0
    if spec.p_fixed:
        Z[:, j : j + spec.p_fixed] = spec.X_fixed
        j += spec.p_fixed
    if spec.p_rw1:
        Z[:, j : j + spec.p_rw1] = spec.X_rw1
        j += spec.p_rw1
    for i in range(spec.p_rw2):
        Z[:, j] = spec.X_rw2[:, i]  # slope columns stay zero
        j += 2
    return Z


def build_state_space(
    spec: ModelSpec, sigma, obs_variance: np.ndarray | None = None
) -> StateSpace:
    """Assemble the filtering arrays for one value of the noise sds.

    ``obs_variance`` overrides the (T,) observation-noise variances; it is
    required for count families, where the values come from the local
    Gaussian approximation.
    """
    sv = as_sigma_vector(spec, sigma)
    T_len, m = spec.n_obs, spec.state_dim
    p_f, p_1, p_2 = spec.p_fixed, spec.p_rw1, spec.p_rw2

    Z = design_rows(spec)

    Tmat = np.eye(m)
    for i in range(p_2):
        j = p_f + p_1 + 2 * i
        Tmat[j, j + 1] = 1.0  # level picks up the slope each step
    tmat_identity = p_2 == 0

    noisy_idx = np.concatenate(
        [
            np.arange(p_f, p_f + p_1),
            p_f + p_1 + 2 * np.arange(p_2) + 1,  # slope rows
        ]
    ).astype(int)
    k = noisy_idx.size
    R = np.zeros((m, k))
    R[noisy_idx, np.arange(k)] = 1.0

    Q = np.empty((T_len, k))
    if p_1:
        Q[:, :p_1] = (spec.gamma_matrix() * sv.sigma_rw1[None, :]) ** 2
    if p_2:
        Q[:, p_1:] = (sv.sigma_rw2[None, :] ** 2) * np.ones((T_len, p_2))

    if obs_variance is not None:
        H = np.asarray(obs_variance, dtype=float)
        if H.shape != (T_len,):
            raise ValueError(f"obs_variance must have shape ({T_len},)")
    elif spec.family == "gaussian":
        H = np.full(T_len, float(sv.sigma_eps) ** 2)
    else:
        raise ValueError("count families need explicit obs_variance")

    a1 = np.empty(m)
    P1diag = np.empty(m)
    a1[: p_f + p_1] = spec.beta1_priors[: p_f + p_1, 0]
    P1diag[: p_f + p_1] = spec.beta1_priors[: p_f + p_1, 1] ** 2
    for i in range(p_2):
        j = p_f + p_1 + 2 * i
        a1[j] = spec.beta1_priors[p_f + p_1 + i, 0]
        P1diag[j] = spec.beta1_priors[p_f + p_1 + i, 1] ** 2
        a1[j + 1] = spec.nu1_priors[i, 0]
        P1diag[j + 1] = spec.nu1_priors[i, 1] ** 2

    return StateSpace(
        Z=Z,
        Tmat=Tmat,
        R=R,
        Q=Q,
        H=H,
        a1=a1,
        P1diag=P1diag,
        noisy_idx=noisy_idx,
        tmat_identity=tmat_identity,
    )


def _check_innovation_variance(F: float, t: int, strict: bool = True) -> None:
    # strict paths divide by F and need it positive; the loglik-only path
    # tolerates a degenerate F (it returns -inf instead) but never a
    # negative or non-finite one, which signals real breakage
    bad = F < _F_TINY if strict else F < 0.0
    if not math.isfinite(F) or bad:
        raise NumericalBreakdownError(
            f"innovation variance F_{t + 1} = {F!r} is not positive and finite"
        )


def _stabilize(P: np.ndarray) -> None:
    """Symmetrize in place and zero out roundoff-negative diagonal entries."""
    P += P.T
    P *= 0.5
    d = np.diagonal(P).copy()
    tiny = (d < 0.0) & (d > -1e-12 * max(np.trace(P), 1.0))
    if tiny.any():
        d[tiny] = 0.0
        np.fill_diagonal(P, d)


def filter_loglik(ssm: StateSpace, y: np.ndarray) -> float:
    """Marginal log likelihood only; no moments are stored.

    Returns -inf when an innovation variance underflows (F < 1e-300); raises
    NumericalBreakdownError when one comes out negative or non-finite.

    This is the sampler's hot path (one call per Metropolis step), so the
    loop is kept lean: the measurement update P -= outer(PZ, PZ)/F is exactly
    symmetric in floating point, so no per-step re-symmetrization is needed
    unless the transition mixes states (rw2 blocks present).
    """
    Z, H, qdiag, Tmat = ssm.Z, ssm.H, ssm.qdiag, ssm.Tmat
    identity = ssm.tmat_identity
    a = ssm.a1.astype(float).copy()
    P = np.diag(ssm.P1diag).astype(float)
    observed = y == y
    loglik = 0.0
    n_terms = 0
    sum_log_F = 0.0
    sum_scaled_sq = 0.0
    Pdiag = np.einsum("ii->i", P)
    # overflow here (data on an absurd scale) means the likelihood is
    # effectively zero; compute quietly and report -inf instead of warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(ssm.n_obs):
            if observed[t]:
                Zt = Z[t]
                PZ = P @ Zt
                F = float(Zt @ PZ + H[t])
                _check_innovation_variance(F, t, strict=False)
                if F < _F_TINY:
                    return -math.inf
                v = float(y[t] - Zt @ a)
                n_terms += 1
                sum_log_F += math.log(F)
                sum_scaled_sq += v * v / F
                a += PZ * (v / F)
                downdate = np.outer(PZ, PZ)  # exactly symmetric, unlike outer(PZ, PZ/F)
                downdate /= F
                P -= downdate
            if not identity:
                a = Tmat @ a
                P = Tmat @ P @ Tmat.T
                _stabilize(P)
                Pdiag = np.einsum("ii->i", P)
            Pdiag += qdiag[t]
    loglik = -0.5 * (n_terms * _LOG_2PI + sum_log_F + sum_scaled_sq)
    return loglik if not math.isnan(loglik) else -math.inf


def kalman_filter(ssm: StateSpace, y: np.ndarray) -> KalmanOutput:
    """Forward pass storing per-time predicted and filtered moments."""
    y = np.asarray(y, dtype=float)
    T_len, m = ssm.n_obs, ssm.m
    if y.shape != (T_len,):
        raise ValueError(f"y must have shape ({T_len},)")
    Z, H, qdiag, Tmat = ssm.Z, ssm.H, ssm.qdiag, ssm.Tmat
    identity = ssm.tmat_identity

    v = np.full(T_len, np.nan)
    F = np.empty(T_len)
    a_pred = np.empty((T_len, m))
    P_pred = np.empty((T_len, m, m))
    a_filt = np.empty((T_len, m))
    P_filt = np.empty((T_len, m, m))

    a = ssm.a1.astype(float).copy()
    P = np.diag(ssm.P1diag).astype(float)
    loglik = 0.0
    for t in range(T_len):
        a_pred[t] = a
        P_pred[t] = P
        Zt = Z[t]
        PZ = P @ Zt
        Ft = float(Zt @ PZ + H[t])
        F[t] = Ft
        yt = y[t]
        if yt == yt:
            _check_innovation_variance(Ft, t, strict=False)
            if Ft < _F_TINY:
                # moments past this point are meaningless; callers must treat
                # a -inf loglik as "reject this sigma", not read the arrays
                return KalmanOutput(-math.inf, v, F, a_pred, P_pred, a_filt, P_filt)
            vt = float(yt - Zt @ a)
            v[t] = vt
            loglik -= 0.5 * (_LOG_2PI + math.log(Ft) + vt * vt / Ft)
            a = a + PZ * (vt / Ft)
            P = P - np.outer(PZ, PZ / Ft)
        a_filt[t] = a
        P_filt[t] = P
        if not identity:
            a = Tmat @ a
            P = Tmat @ P @ Tmat.T
        d = np.einsum("ii->i", P)
        d += qdiag[t]
        _stabilize(P)
    return KalmanOutput(loglik, v, F, a_pred, P_pred, a_filt, P_filt)


def kalman_smoother(ssm: StateSpace, y: np.ndarray) -> KalmanOutput:
    """Filter + backward pass; fills the smoothed moments."""
    out = kalman_filter(ssm, y)
    if out.loglik == -math.inf:
        raise NumericalBreakdownError("cannot smooth: likelihood underflowed to -inf")
    T_len, m = ssm.n_obs, ssm.m
    Z, Tmat = ssm.Z, ssm.Tmat
    identity = ssm.tmat_identity
    eye = np.eye(m)

    a_smooth = np.empty((T_len, m))
    P_smooth = np.empty((T_len, m, m))
    r = np.zeros(m)
    N = np.zeros((m, m))
    for t in range(T_len - 1, -1, -1):
        Pt = out.P_pred[t]
        if out.v[t] == out.v[t]:  # observed
            Zt = Z[t]
            Ft = out.F[t]
            W = (Pt @ Zt) / Ft
            if identity:
                L = eye - np.outer(W, Zt)
            else:
                L = Tmat @ (eye - np.outer(W, Zt))
            r = Zt * (out.v[t] / Ft) + L.T @ r
            N = np.outer(Zt, Zt / Ft) + L.T @ N @ L
        elif not identity:
            r = Tmat.T @ r
            N = Tmat.T @ N @ Tmat
        a_smooth[t] = out.a_pred[t] + Pt @ r
        PN = Pt @ N
        Ps = Pt - PN @ Pt
        Ps = 0.5 * (Ps + Ps.T)
        P_smooth[t] = Ps
    out.a_smooth = a_smooth
    out.P_smooth = P_smooth
    return out


def marginal_loglik(spec: ModelSpec, sigma) -> float:
    """Gaussian-family data log likelihood with coefficients integrated out."""
    ssm = build_state_space(spec, sigma)
    return filter_loglik(ssm, spec.y)
