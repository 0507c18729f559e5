"""Posterior summaries, convergence diagnostics, prediction and checking.

Summaries report mean, sd and the 2.5/50/97.5 percent quantiles per scalar
quantity, with rank-normalized split-chain R-hat and ESS.  When a fit
carries importance log-weights (count families), means, sds and quantiles
are weight-corrected via self-normalized importance sampling; R-hat/ESS stay
unweighted since they describe the mixing of the underlying chains.
"""

from __future__ import annotations

import math
import re

import numpy as np
import pandas as pd
from scipy.fft import next_fast_len
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import DimensionMismatchError
from .kalman import design_rows
from .model import ModelSpec
from .sampler import PosteriorDraws

SUMMARY_COLUMNS = [
    "variable",
    "time",
    "mean",
    "sd",
    "lwr",
    "median",
    "upr",
    "ess",
    "rhat",
]
QUANTILES = (0.025, 0.5, 0.975)


# ---------------------------------------------------------------------------
# chain diagnostics


def _split_chains(chains: np.ndarray) -> np.ndarray:
    """(C, K) -> (2C, K//2), dropping one draw per chain when K is odd."""
    c, k = chains.shape
    half = k // 2
    if half == 0:
        return chains
    return np.concatenate([chains[:, :half], chains[:, k - half :]], axis=0)


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    flat = chains.reshape(-1)
    ranks = rankdata(flat, method="average")
    z = ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(chains.shape)


def split_rhat(chains: np.ndarray) -> float:
    """Rank-normalized split-chain potential scale reduction factor.

    ``chains`` is (n_chains, n_draws).  Degenerate (zero-variance) inputs
    return 1.0 by convention.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    if np.allclose(chains, chains.flat[0]):
        return 1.0
    z = _rank_normalize(_split_chains(chains))
    m, n = z.shape
    if n < 2 or m < 2:
        return 1.0
    means = z.mean(axis=1)
    b = n * means.var(ddof=1)
    w = z.var(axis=1, ddof=1).mean()
    if w <= 0.0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariances of one chain via FFT."""
    n = x.size
    xc = x - x.mean()
    size = 2 * next_fast_len(n)
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def ess(chains: np.ndarray) -> float:
    """Rank-normalized effective sample size of merged split chains.

    Autocorrelations are combined across chains and summed in adjacent
    pairs, truncating at the first non-positive pair; the estimate is capped
    at the total draw count.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    total = chains.size
    if np.allclose(chains, chains.flat[0]):
        return float(total)
    z = _rank_normalize(_split_chains(chains))
    m, n = z.shape
    if n < 4:
        return float(total)
    acov = np.stack([_autocov(z[i]) for i in range(m)])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += z.mean(axis=1).var(ddof=1)
    if var_plus <= 0.0:
        return float(total)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = 0.0
    t = 0
    max_pairs = (n - 1) // 2
    for j in range(max_pairs):
        pair = rho[2 * j] + rho[2 * j + 1]
        if pair <= 0.0:
            break
        tau += pair
        t += 1
    tau = max(2.0 * tau - 1.0, 1e-12)
    return float(min(m * n / tau, total))


# ---------------------------------------------------------------------------
# weighted moments


def weighted_quantile(x: np.ndarray, weights: np.ndarray, q) -> np.ndarray:
    """Step-function (type-1) quantiles of weighted draws.

    With equal weights this reproduces ``np.quantile(..., method=
    "inverted_cdf")`` exactly, so weighted and unweighted summaries coincide
    when every weight is the same.
    """
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if x.shape != weights.shape:
        raise DimensionMismatchError("draws and weights must have the same shape")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    idx = np.searchsorted(cw, qs, side="left")
    idx = np.minimum(idx, xs.size - 1)
    out = xs[idx]
    return out if np.ndim(q) else float(out[0])


def _moments(x: np.ndarray, weights: np.ndarray | None):
    """(mean, sd, q2.5, median, q97.5) of one flat draw vector."""
    if weights is None:
        qs = np.quantile(x, QUANTILES, method="inverted_cdf")
        ddof = 1 if x.size > 1 else 0
        return float(x.mean()), float(x.std(ddof=ddof)), *map(float, qs)
    mean = float(np.sum(weights * x))
    var = float(np.sum(weights * (x - mean) ** 2))
    qs = weighted_quantile(x, weights, QUANTILES)
    return mean, math.sqrt(max(var, 0.0)), *map(float, qs)


# ---------------------------------------------------------------------------
# naming and layout shared with the CLI output files


def variable_names(spec: ModelSpec) -> list[tuple[str, int | None, int]]:
    """Canonical per-scalar layout: (name, time, column).

    ``time`` is the 1-based index for per-time variables, None otherwise.
    Non-negative columns index the state vector; column ``-1 - i`` stands for
    sd component i of the sigma draws.
    """
    entries: list[tuple[str, int | None, int]] = []
    for i, name in enumerate(spec.sigma_names):
        entries.append((name, None, -1 - i))
    p_f, p_1 = spec.p_fixed, spec.p_rw1
    for j, name in enumerate(spec.fixed_names):
        entries.append((f"beta_{name}", None, j))
    for j, name in enumerate(spec.rw1_names):
        for t in range(spec.n_obs):
            entries.append((f"tv_{name}[{t + 1}]", t + 1, p_f + j))
    for j, name in enumerate(spec.rw2_names):
        col = p_f + p_1 + 2 * j
        for t in range(spec.n_obs):
            entries.append((f"tv_{name}[{t + 1}]", t + 1, col))
    for j, name in enumerate(spec.rw2_names):
        col = p_f + p_1 + 2 * j + 1
        for t in range(spec.n_obs):
            entries.append((f"nu_{name}[{t + 1}]", t + 1, col))
    return entries


def _scalar_matrix(draws: PosteriorDraws, time: int | None, col: int) -> np.ndarray:
    """(C, K) draw matrix for one summary row."""
    if col < 0:
        return draws.sigma_draws[:, :, -col - 1]
    return draws.state_draws[:, :, (time or 1) - 1, col]


def _effective_weights(draws: PosteriorDraws) -> np.ndarray | None:
    """Normalized weights, or None when they are all equal (exact fits or a
    degenerate weight vector), so the unweighted code path is used."""
    lw = draws.log_weights.reshape(-1)
    if np.all(lw == lw[0]):
        return None
    return draws.normalized_weights()


def _summary_frame(entries, weights) -> pd.DataFrame:
    """Shared summary builder over (name, time, (C, K) matrix) triples."""
    rows = []
    for name, time, mat in entries:
        mean, sd, lwr, med, upr = _moments(mat.reshape(-1), weights)
        rows.append(
            {
                "variable": name,
                "time": time,
                "mean": mean,
                "sd": sd,
                "lwr": lwr,
                "median": med,
                "upr": upr,
                "ess": ess(mat),
                "rhat": split_rhat(mat),
            }
        )
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    frame["time"] = frame["time"].astype("Int64")
    return frame


def summarize(draws: PosteriorDraws) -> pd.DataFrame:
    """Per-variable posterior summary table.

    Rows cover the noise sds, any time-invariant coefficients, the
    time-varying coefficient paths (``tv_<term>[t]``) and second-order walk
    slopes (``nu_<term>[t]``).  Columns: variable, time, mean, sd, lwr,
    median, upr, ess, rhat.
    """
    weights = _effective_weights(draws)
    entries = (
        (name, time, _scalar_matrix(draws, time, col))
        for name, time, col in variable_names(draws.spec)
    )
    return _summary_frame(entries, weights)


# ---------------------------------------------------------------------------
# long-table (draws.csv) interchange

_TIME_SUFFIX = r"\[(\d+)\]$"


def _normalize_log_weights(lw: np.ndarray) -> np.ndarray:
    w = np.exp(lw - lw.max())
    return w / w.sum()


def draws_long_table(draws: PosteriorDraws) -> pd.DataFrame:
    """Tidy (chain, iteration, variable, value) table of every kept draw.

    Variables follow :func:`variable_names` order; count-family fits append a
    trailing ``lweight`` holding each draw's importance log-weight (exact
    Gaussian fits have no weights to record).  Chains and iterations are
    numbered from 1.
    """
    entries = variable_names(draws.spec)
    weighted = draws.spec.family == "poisson"
    names = [e[0] for e in entries] + (["lweight"] if weighted else [])
    c, k, nv = draws.n_chains, draws.kept, len(names)
    values = np.empty((c, k, nv))
    for j, (_, time, col) in enumerate(entries):
        values[:, :, j] = _scalar_matrix(draws, time, col)
    if weighted:
        values[:, :, -1] = draws.log_weights
    return pd.DataFrame(
        {
            "chain": np.repeat(np.arange(1, c + 1), k * nv),
            "iteration": np.tile(np.repeat(np.arange(1, k + 1), nv), c),
            "variable": np.tile(np.array(names, dtype=object), c * k),
            "value": values.reshape(-1),
        }
    )


def _wide_values(table: pd.DataFrame):
    """Invert :func:`draws_long_table`: (names, (C, K, nv) value array)."""
    for col in ("chain", "iteration", "variable", "value"):
        if col not in table.columns:
            raise DimensionMismatchError(f"draws table lacks the {col!r} column")
    names = list(pd.unique(table["variable"]))
    wide = table.pivot(index=["chain", "iteration"], columns="variable", values="value")
    if wide.isna().any().any():
        raise DimensionMismatchError("draws table is ragged across chains/iterations")
    wide = wide.sort_index()[names]
    c = wide.index.get_level_values("chain").nunique()
    k = wide.shape[0] // c
    if c * k != wide.shape[0]:
        raise DimensionMismatchError("chains have differing numbers of iterations")
    return names, wide.to_numpy().reshape(c, k, len(names))


def summarize_long_table(table: pd.DataFrame) -> pd.DataFrame:
    """Recompute the summary table from a (possibly re-read) draws table.

    Produces float-identical results to :func:`summarize` on the fit that
    wrote the table, because CSV serialization round-trips the draw values
    exactly.
    """
    names, values = _wide_values(table)
    if "lweight" in names:
        lw = values[:, :, names.index("lweight")].reshape(-1)
        weights = None if np.all(lw == lw[0]) else _normalize_log_weights(lw)
    else:
        weights = None

    def entries():
        for j, name in enumerate(names):
            if name == "lweight":
                continue
            m = re.search(_TIME_SUFFIX, name)
            time = int(m.group(1)) if m else None
            yield name, time, values[:, :, j]

    return _summary_frame(entries(), weights)


def coef_paths(summary: pd.DataFrame) -> pd.DataFrame:
    """Reduce a summary table to the time-varying coefficient ribbon data."""
    mask = summary["variable"].str.startswith("tv_")
    sub = summary.loc[mask, ["variable", "time", "mean", "lwr", "upr"]].copy()
    sub["variable"] = sub["variable"].str.replace(r"\[\d+\]$", "", regex=True)
    return sub.reset_index(drop=True)


# ---------------------------------------------------------------------------
# prediction


def _final_states(draws: PosteriorDraws) -> np.ndarray:
    return draws.flat_states()[:, -1, :]


def predict(
    spec: ModelSpec,
    draws: PosteriorDraws,
    new_x: np.ndarray,
    mode: str = "response",
    exposure: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw h-step-ahead predictions; returns (h, n_draws).

    ``new_x`` is (h, p) with columns in coefficient order (fixed, rw1, rw2);
    intercept columns must be included as ones.  Each posterior draw's final
    state is pushed forward with fresh walk noise from that draw's sds.  With
    ``mode="mean"`` the rows are signal draws (count family:
    exposure * exp(signal)); the default ``mode="response"`` adds observation
    noise / count sampling.  Walk-noise rescaling sequences continue at their
    last in-sample value.
    """
    if rng is None:
        rng = np.random.default_rng()
    if mode not in ("mean", "response"):
        raise ValueError(f"unknown mode {mode!r}")
    new_x = np.atleast_2d(np.asarray(new_x, dtype=float))
    if new_x.shape[1] != spec.n_coef:
        raise DimensionMismatchError(
            f"new_x has {new_x.shape[1]} columns, model has {spec.n_coef} coefficients"
        )
    h = new_x.shape[0]
    sigma = draws.flat_sigma()
    states = _final_states(draws).copy()
    n_draws = states.shape[0]
    p_f, p_1, p_2 = spec.p_fixed, spec.p_rw1, spec.p_rw2

    has_eps = spec.family == "gaussian"
    sd_eps = sigma[:, 0] if has_eps else None
    off = 1 if has_eps else 0
    gamma_last = spec.gamma_matrix()[-1] if p_1 else np.empty(0)
    sd_rw1 = sigma[:, off : off + p_1] * gamma_last[None, :]
    sd_rw2 = sigma[:, off + p_1 :]

    if spec.family == "poisson":
        exposure = np.ones(h) if exposure is None else np.asarray(exposure, dtype=float)
        if exposure.shape != (h,):
            raise DimensionMismatchError(f"exposure must have shape ({h},)")

    rw2_level = p_f + p_1 + 2 * np.arange(p_2)
    z_cols = np.concatenate([np.arange(p_f + p_1), rw2_level]).astype(int)

    out = np.empty((h, n_draws))
    for step in range(h):
        # advance one step: levels pick up slopes, then noise hits walks
        if p_2:
            states[:, rw2_level] += states[:, rw2_level + 1]
        if p_1:
            states[:, p_f : p_f + p_1] += sd_rw1 * rng.standard_normal((n_draws, p_1))
        if p_2:
            states[:, rw2_level + 1] += sd_rw2 * rng.standard_normal((n_draws, p_2))
        signal = states[:, z_cols] @ new_x[step]
        if spec.family == "gaussian":
            out[step] = signal
            if mode == "response":
                out[step] += sd_eps * rng.standard_normal(n_draws)
        else:
            mean = exposure[step] * np.exp(signal)
            out[step] = rng.poisson(mean) if mode == "response" else mean
    return out


# ---------------------------------------------------------------------------
# posterior predictive checking

_STAT_FUNCS = {"mean": np.mean, "sd": lambda v: np.std(v, ddof=0), "min": np.min, "max": np.max}


def pp_check(
    spec: ModelSpec,
    draws: PosteriorDraws,
    stats: tuple[str, ...] = ("mean", "sd", "min", "max"),
    rng: np.random.Generator | None = None,
) -> dict:
    """Posterior predictive replicates of the observed series.

    For each kept draw a full replicate series is simulated from that draw's
    signal and observation model; each requested statistic is evaluated over
    the observed time points.  Returns, per statistic, the replicate values,
    the observed value and the (weight-corrected) tail probability
    P(stat_rep >= stat_obs).  Count-family replicates are drawn unweighted
    from the working posterior; only the tail probabilities fold in the
    importance weights.
    """
    if rng is None:
        rng = np.random.default_rng()
    unknown = set(stats) - set(_STAT_FUNCS)
    if unknown:
        raise ValueError(f"unknown statistics: {sorted(unknown)}")
    obs_mask = spec.observed
    if not obs_mask.any():
        raise ValueError("no observed responses to check against")
    Z = design_rows(spec)[obs_mask]
    paths = draws.flat_states()[:, obs_mask, :]
    signal = np.einsum("ntm,tm->nt", paths, Z)
    n_draws = signal.shape[0]
    if spec.family == "gaussian":
        sd_eps = draws.flat_sigma()[:, 0][:, None]
        reps = signal + sd_eps * rng.standard_normal(signal.shape)
    else:
        u = spec.exposure_vector()[obs_mask]
        reps = rng.poisson(u[None, :] * np.exp(signal)).astype(float)
    weights = _effective_weights(draws)
    if weights is None:
        weights = np.full(n_draws, 1.0 / n_draws)

    y_obs = spec.y[obs_mask]
    result = {}
    for stat in stats:
        f = _STAT_FUNCS[stat]
        rep_vals = np.apply_along_axis(f, 1, reps)
        obs_val = float(f(y_obs))
        tail = float(np.sum(weights * (rep_vals >= obs_val)))
        result[stat] = {
            "replicates": rep_vals,
            "observed": obs_val,
            "tail_prob": tail,
        }
    return result
