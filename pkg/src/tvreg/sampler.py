"""MCMC over the noise sds, with coefficient paths recovered per draw.

Marginalizing the coefficient paths out of the likelihood leaves a posterior
over just the noise sds (observation sd plus one walk sd per time-varying
coefficient).  That low-dimensional target is explored with an adaptive
random-walk Metropolis sampler in log space (the log transform's Jacobian,
sum(log sigma), is added to the target).  During warmup the proposal scale
chases a target acceptance rate and, after the first 100 warmup steps, the
proposal shape tracks the empirical covariance of the draws; both freeze
when warmup ends so the kept draws come from a fixed Markov kernel.

For every kept draw one full coefficient path is simulated conditional on
that draw's sds.  Gaussian models yield exact path draws (log weight 0);
count models draw from the working Gaussian posterior and carry the
importance log-weight correcting the approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InitFailureError, NumericalBreakdownError
from .glmapprox import (
    approx_log_marginal,
    gaussian_approximation,
    importance_weight,
)
from .kalman import build_state_space, filter_loglik, kalman_smoother
from .model import ModelSpec, as_sigma_vector, log_prior
from .simsmooth import simulate_states

TARGET_ACCEPT = 0.234
_COV_ADAPT_START = 100
_RM_DECAY = 0.66


@dataclass
class SamplerConfig:
    """Run-length and tuning knobs; defaults follow common practice.

    ``steps_per_iter`` is internal thinning: each recorded iteration advances
    the Metropolis kernel that many steps.  A random-walk kernel needs it to
    reach a useful effective sample size per recorded draw — path simulation
    per draw costs far more than a kernel step, so trading kernel steps for
    autocorrelation is almost free.
    """

    iter: int = 2000
    warmup: int | None = None
    chains: int = 4
    seed: int = 1
    target_accept: float = TARGET_ACCEPT
    init_jitter: float = 1.0
    steps_per_iter: int = 8

    def __post_init__(self):
        if self.warmup is None:
            self.warmup = self.iter // 2
        if not 0 <= self.warmup < self.iter:
            raise ValueError("need 0 <= warmup < iter")
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.steps_per_iter < 1:
            raise ValueError("steps_per_iter must be at least 1")

    @property
    def kept(self) -> int:
        return self.iter - self.warmup


@dataclass
class PosteriorDraws:
    """Merged output of all chains.

    ``sigma_draws`` is (chains, kept, n_sigma); ``state_draws`` (chains,
    kept, T, m); ``log_weights`` (chains, kept) with zeros for exact
    (Gaussian) fits; ``lp`` the per-draw log target (marginal likelihood or
    its surrogate, plus the sd prior); ``accept_rate`` one post-warmup rate
    per chain.
    """

    spec: ModelSpec
    sigma_draws: np.ndarray
    state_draws: np.ndarray
    log_weights: np.ndarray
    lp: np.ndarray
    accept_rate: np.ndarray

    @property
    def n_chains(self) -> int:
        return self.sigma_draws.shape[0]

    @property
    def kept(self) -> int:
        return self.sigma_draws.shape[1]

    def flat_sigma(self) -> np.ndarray:
        return self.sigma_draws.reshape(-1, self.sigma_draws.shape[-1])

    def flat_states(self) -> np.ndarray:
        return self.state_draws.reshape(-1, *self.state_draws.shape[-2:])

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights.reshape(-1)
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def weight_ess(self) -> float:
        """Effective sample size of the normalized importance weights."""
        w = self.normalized_weights()
        return float(1.0 / np.sum(w * w))


@dataclass
class KernelResult:
    draws: np.ndarray
    lp: np.ndarray
    accept_rate: float
    proposal_chol: np.ndarray
    log_scale: float


def log_marginal_posterior(spec: ModelSpec, sigma) -> float:
    """Log p(sigma | y) up to a constant: marginal likelihood (or its
    count-family surrogate) plus the sd prior; -inf outside the support or on
    numerical breakdown."""
    values = np.asarray(sigma, dtype=float)
    if (values < 0).any() or not np.isfinite(values).all():
        return -math.inf
    sv = as_sigma_vector(spec, values)
    try:
        if spec.family == "gaussian":
            lp = log_prior(spec, sv)
            if lp == -math.inf:
                return -math.inf
            ssm = build_state_space(spec, sv)
            return filter_loglik(ssm, spec.y) + lp
        return approx_log_marginal(spec, sv)
    except (NumericalBreakdownError, OverflowError):
        return -math.inf


def adaptive_random_walk(
    log_target,
    x0: np.ndarray,
    n_iter: int,
    warmup: int,
    rng: np.random.Generator,
    target_accept: float = TARGET_ACCEPT,
    initial_scale: float | None = None,
    steps_per_iter: int = 1,
) -> KernelResult:
    """Generic adaptive Metropolis kernel; returns the post-warmup draws.

    The proposal is x + exp(log_scale) * L z with z standard normal and L the
    Cholesky factor of the adapted covariance (identity until 100 warmup
    steps have accumulated).  log_scale follows a Robbins-Monro recursion
    pushing the expected acceptance probability toward ``target_accept``.
    With ``warmup=0`` the kernel never adapts, which makes it a plain
    fixed-kernel Metropolis sampler.

    ``steps_per_iter`` thins internally: every recorded iteration advances
    the chain that many Metropolis steps (adaptation happens per step, so
    warmup covers warmup * steps_per_iter steps).  The acceptance rate is
    reported per step, post-warmup.
    """
    x = np.asarray(x0, dtype=float).copy()
    d = x.size
    lp = float(log_target(x))
    if not math.isfinite(lp):
        raise ValueError("starting point has non-finite target density")

    log_scale = math.log(initial_scale if initial_scale is not None else 2.38 / math.sqrt(d))
    chol = np.eye(d)
    run_mean = np.zeros(d)
    run_m2 = np.zeros((d, d))

    kept = n_iter - warmup
    draws = np.empty((kept, d))
    lps = np.empty(kept)
    accepted_kept = 0
    warmup_steps = warmup * steps_per_iter
    total_steps = n_iter * steps_per_iter

    for n in range(total_steps):
        prop = x + math.exp(log_scale) * (chol @ rng.standard_normal(d))
        lp_prop = float(log_target(prop))
        log_alpha = min(0.0, lp_prop - lp) if math.isfinite(lp_prop) else -math.inf
        if rng.random() < math.exp(log_alpha):
            x, lp = prop, lp_prop
            if n >= warmup_steps:
                accepted_kept += 1
        if n < warmup_steps:
            # scale chases the target acceptance rate
            step = (n + 1.0) ** (-_RM_DECAY)
            log_scale += step * (math.exp(log_alpha) - target_accept)
            # accumulate the empirical covariance of the warmup draws
            count = n + 1
            delta = x - run_mean
            run_mean += delta / count
            run_m2 += np.outer(delta, x - run_mean)
            if count > _COV_ADAPT_START:
                cov = run_m2 / (count - 1)
                try:
                    chol = np.linalg.cholesky(cov + 1e-10 * np.eye(d))
                except np.linalg.LinAlgError:
                    pass  # keep the previous factor
        elif (n - warmup_steps + 1) % steps_per_iter == 0:
            k = (n - warmup_steps) // steps_per_iter
            draws[k] = x
            lps[k] = lp
    return KernelResult(
        draws=draws,
        lp=lps,
        accept_rate=accepted_kept / max(kept * steps_per_iter, 1),
        proposal_chol=chol,
        log_scale=log_scale,
    )


def _chain_rng(seed: int, chain_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_id,)))


def _initial_point(spec: ModelSpec, config: SamplerConfig, target, rng) -> np.ndarray:
    prior_sd = spec.sigma_priors[:, 1]
    center = np.log(prior_sd / 2.0)
    for _ in range(100):
        u = center + config.init_jitter * rng.standard_normal(spec.n_sigma)
        if math.isfinite(target(u)):
            return u
    raise InitFailureError(
        "no finite-posterior starting point in 100 draws; "
        "check the data scale and priors"
    )


def run_chain(spec: ModelSpec, config: SamplerConfig, chain_id: int):
    """One independent chain: returns (sigma, states, log_weights, lp, rate)."""
    rng = _chain_rng(config.seed, chain_id)

    def target(u: np.ndarray) -> float:
        lp = log_marginal_posterior(spec, np.exp(u))
        return lp + float(np.sum(u)) if math.isfinite(lp) else -math.inf

    u0 = _initial_point(spec, config, target, rng)
    kernel = adaptive_random_walk(
        target, u0, config.iter, config.warmup, rng, config.target_accept,
        steps_per_iter=config.steps_per_iter,
    )

    kept = config.kept
    sigma = np.exp(kernel.draws)
    lp = kernel.lp - kernel.draws.sum(axis=1)  # drop the log-transform Jacobian
    states = np.empty((kept, spec.n_obs, spec.state_dim))
    log_weights = np.zeros(kept)

    # one path simulation per kept draw; consecutive equal sds reuse the
    # pieces that do not depend on the rng
    gaussian = spec.family == "gaussian"
    cached_key = None
    ssm = smoothed = approx = None
    for k in range(kept):
        sig = sigma[k]
        key = sig.tobytes()
        if key != cached_key:
            sv = as_sigma_vector(spec, sig)
            if gaussian:
                ssm = build_state_space(spec, sv)
                smoothed = kalman_smoother(ssm, spec.y).a_smooth
            else:
                approx = gaussian_approximation(spec, sv)
                ssm = build_state_space(spec, sv, obs_variance=approx.H_pseudo)
                smoothed = kalman_smoother(ssm, approx.y_pseudo).a_smooth
            cached_key = key
        y_cond = spec.y if gaussian else approx.y_pseudo
        path = simulate_states(ssm, y_cond, rng, smoothed_mean=smoothed)
        states[k] = path
        if not gaussian:
            log_weights[k] = importance_weight(spec, approx, path)
    return sigma, states, log_weights, lp, kernel.accept_rate


def run(spec: ModelSpec, config: SamplerConfig | None = None) -> PosteriorDraws:
    """Run all chains and merge them in chain-id order.

    Chains are mutually independent: chain i uses the generator spawned from
    (seed, i), so results are reproducible draw-for-draw regardless of how
    the chains are scheduled.
    """
    if config is None:
        config = SamplerConfig()
    kept = config.kept
    sigma = np.empty((config.chains, kept, spec.n_sigma))
    states = np.empty((config.chains, kept, spec.n_obs, spec.state_dim))
    log_weights = np.empty((config.chains, kept))
    lp = np.empty((config.chains, kept))
    rates = np.empty(config.chains)
    for c in range(config.chains):
        sigma[c], states[c], log_weights[c], lp[c], rates[c] = run_chain(
            spec, config, c
        )
    return PosteriorDraws(
        spec=spec,
        sigma_draws=sigma,
        state_draws=states,
        log_weights=log_weights,
        lp=lp,
        accept_rate=rates,
    )
