"""Gaussian working model and importance correction for count responses.

For a Poisson response with exposure u_t and log-mean signal
theta_t = Z_t state_t, the non-Gaussian observation density is replaced by a
working Gaussian one matched to its curvature at a signal value theta:

    H_t = 1 / (u_t * exp(theta_t))          (pseudo observation variance)
    ytilde_t = theta_t + y_t * H_t - 1      (pseudo observation)

Iterating smooth-then-relinearize from theta0_t = log((y_t + 0.1) / u_t)
converges to the joint posterior mode of the signal for the given noise sds.
The marginal likelihood of the pseudo-data, corrected by the ratio of true
to working densities at the mode, is a deterministic surrogate for the
intractable marginal; paths drawn from the working posterior get
importance log-weights anchored at the mode, so the weight of the mode path
is exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .kalman import build_state_space, design_rows, filter_loglik, kalman_smoother
from .model import ModelSpec, as_sigma_vector, log_prior

_LOG_2PI = math.log(2.0 * math.pi)

MAX_APPROX_ITER = 100
APPROX_TOL = 1e-8
MAX_STEP_HALVINGS = 10


@dataclass
class ApproxModel:
    """Converged working model: pseudo-data, variances and the mode signal."""

    y_pseudo: np.ndarray
    H_pseudo: np.ndarray
    theta_mode: np.ndarray
    iterations_used: int
    converged: bool


def poisson_loglik(y: np.ndarray, theta: np.ndarray, exposure: np.ndarray) -> np.ndarray:
    """Pointwise Poisson log pmf with mean exposure * exp(theta)."""
    log_mean = np.log(exposure) + theta
    return y * log_mean - np.exp(log_mean) - gammaln(y + 1.0)


def _working_loglik(y_pseudo, theta, H_pseudo) -> np.ndarray:
    resid = y_pseudo - theta
    return -0.5 * (_LOG_2PI + np.log(H_pseudo) + resid * resid / H_pseudo)


def _pseudo_data(y, theta, exposure, observed):
    """Pseudo observations/variances from a linearization point theta."""
    with np.errstate(over="ignore"):
        rate = exposure * np.exp(theta)
    checked = rate[observed]
    if not np.isfinite(checked).all() or (checked <= 0.0).any():
        raise OverflowError("exp(signal) over/underflowed during the Gaussian approximation")
    H = np.where(rate > 0, 1.0 / np.where(rate > 0, rate, 1.0), 1.0)
    ytilde = np.where(observed, theta + y * H - 1.0, np.nan)
    return ytilde, H


def gaussian_approximation(
    spec: ModelSpec,
    sigma,
    tol: float = APPROX_TOL,
    max_iter: int = MAX_APPROX_ITER,
) -> ApproxModel:
    """Iterate the working Gaussian model to the signal posterior mode.

    Stops when the largest absolute signal change drops below ``tol``
    (default 1e-8) or after ``max_iter`` passes; a pass whose change exceeds
    the previous one is halved toward the old signal up to 10 times.
    """
    sv = as_sigma_vector(spec, sigma)
    y0 = spec.y
    observed = spec.observed
    u = spec.exposure_vector()
    Z = design_rows(spec)

    mean_rate = (np.nanmean(y0) + 0.1) / np.mean(u) if observed.any() else 1.0
    theta = np.where(
        observed, np.log((np.where(observed, y0, 0.0) + 0.1) / u), math.log(mean_rate)
    )

    prev_change = math.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        ytilde, H = _pseudo_data(y0, theta, u, observed)
        ssm = build_state_space(spec, sv, obs_variance=H)
        smoothed = kalman_smoother(ssm, ytilde).a_smooth
        theta_new = np.einsum("tm,tm->t", Z, smoothed)
        change = float(np.max(np.abs(theta_new - theta)))
        halvings = 0
        while change >= prev_change and halvings < MAX_STEP_HALVINGS:
            theta_new = 0.5 * (theta + theta_new)
            change *= 0.5
            halvings += 1
        theta = theta_new
        if change < tol:
            converged = True
            break
        prev_change = change

    # the returned pseudo-data must be the ones linearized exactly at the mode
    ytilde, H = _pseudo_data(y0, theta, u, observed)
    return ApproxModel(
        y_pseudo=ytilde,
        H_pseudo=H,
        theta_mode=theta,
        iterations_used=iterations,
        converged=converged,
    )


def mode_correction(spec: ModelSpec, approx: ApproxModel) -> float:
    """Sum over observed times of log p(y_t | mode) - log working(ytilde_t | mode)."""
    obs = spec.observed
    u = spec.exposure_vector()
    true_ll = poisson_loglik(spec.y[obs], approx.theta_mode[obs], u[obs])
    work_ll = _working_loglik(
        approx.y_pseudo[obs], approx.theta_mode[obs], approx.H_pseudo[obs]
    )
    return float(np.sum(true_ll) - np.sum(work_ll))


def approx_log_marginal(spec: ModelSpec, sigma, approx: ApproxModel | None = None) -> float:
    """Mode-corrected surrogate for log p(y, sigma): working marginal
    likelihood of the pseudo-data plus the density-ratio correction at the
    mode plus the sd prior.  Returns -inf when the approximation failed to
    converge.
    """
    sv = as_sigma_vector(spec, sigma)
    lp = log_prior(spec, sv)
    if lp == -math.inf:
        return -math.inf
    if approx is None:
        approx = gaussian_approximation(spec, sv)
    if not approx.converged:
        return -math.inf
    ssm = build_state_space(spec, sv, obs_variance=approx.H_pseudo)
    ll = filter_loglik(ssm, approx.y_pseudo)
    if ll == -math.inf:
        return -math.inf
    return ll + mode_correction(spec, approx) + lp


def importance_weight(spec: ModelSpec, approx: ApproxModel, path: np.ndarray) -> float:
    """Log importance weight of one (T, m) path drawn from the working
    posterior, anchored so the mode path gets exactly zero."""
    Z = design_rows(spec)
    theta = np.einsum("tm,tm->t", Z, path)
    obs = spec.observed
    u = spec.exposure_vector()
    ratio_path = poisson_loglik(spec.y[obs], theta[obs], u[obs]) - _working_loglik(
        approx.y_pseudo[obs], theta[obs], approx.H_pseudo[obs]
    )
    ratio_mode = poisson_loglik(
        spec.y[obs], approx.theta_mode[obs], u[obs]
    ) - _working_loglik(approx.y_pseudo[obs], approx.theta_mode[obs], approx.H_pseudo[obs])
    return float(np.sum(ratio_path) - np.sum(ratio_mode))
