"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's recursions: likelihoods
come from dense joint-Gaussian marginalization, posterior modes from dense
Newton iterations, and posterior expectations from grid/adaptive quadrature.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve

from tvreg.kalman import StateSpace, design_rows
from tvreg.model import ModelSpec

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# dense joint-Gaussian oracle


def dense_joint_moments(ssm: StateSpace):
    """Mean/covariance of the stacked states by brute-force propagation."""
    T, m = ssm.n_obs, ssm.m
    mu = np.empty((T, m))
    cov = np.zeros((T, T, m, m))
    mu[0] = ssm.a1
    cov[0, 0] = np.diag(ssm.P1diag)
    for t in range(T - 1):
        mu[t + 1] = ssm.Tmat @ mu[t]
        cov[t + 1, t + 1] = ssm.Tmat @ cov[t, t] @ ssm.Tmat.T + np.diag(ssm.qdiag[t])
        for s in range(t + 1):
            cov[t + 1, s] = ssm.Tmat @ cov[t, s]
            cov[s, t + 1] = cov[t + 1, s].T
    return mu, cov


def dense_observation_moments(ssm: StateSpace):
    """Mean vector and dense covariance of the observations y_{1:T}."""
    mu, cov = dense_joint_moments(ssm)
    mean_y = np.einsum("ti,ti->t", ssm.Z, mu)
    cov_y = np.einsum("ti,tsij,sj->ts", ssm.Z, cov, ssm.Z)
    cov_y[np.diag_indices_from(cov_y)] += ssm.H
    return mean_y, cov_y


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    chol, lower = cho_factor(cov, lower=True)
    resid = x - mean
    quad = resid @ cho_solve((chol, lower), resid)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (x.size * LOG_2PI + logdet + quad))


def dense_loglik(ssm: StateSpace, y: np.ndarray) -> float:
    """Marginal log likelihood via the dense observation distribution."""
    y = np.asarray(y, dtype=float)
    obs = ~np.isnan(y)
    mean_y, cov_y = dense_observation_moments(ssm)
    return mvn_logpdf(y[obs], mean_y[obs], cov_y[np.ix_(obs, obs)])


def dense_smoothed_states(ssm: StateSpace, y: np.ndarray):
    """E[states | y] and joint covariance by dense Gaussian conditioning."""
    y = np.asarray(y, dtype=float)
    obs = np.flatnonzero(~np.isnan(y))
    T, m = ssm.n_obs, ssm.m
    mu, cov = dense_joint_moments(ssm)
    mean_y = np.einsum("ti,ti->t", ssm.Z, mu)[obs]
    cov_y = np.einsum("ti,tsij,sj->ts", ssm.Z, cov, ssm.Z)[np.ix_(obs, obs)]
    cov_y[np.diag_indices_from(cov_y)] += ssm.H[obs]
    # Cov(states_t, y_s) = Sigma_{t,s} Z_s'
    cross = np.einsum("tsij,sj->tsi", cov[:, obs], ssm.Z[obs])  # (T, n_obs, m)
    chol = cho_factor(cov_y, lower=True)
    gain = cho_solve(chol, y[obs] - mean_y)
    smooth_mean = mu + np.einsum("tsi,s->ti", cross, gain)
    flat_cross = cross.transpose(0, 2, 1).reshape(T * m, obs.size)
    reduction = flat_cross @ cho_solve(chol, flat_cross.T)
    joint = cov.transpose(0, 2, 1, 3).reshape(T * m, T * m) - reduction
    return smooth_mean, joint.reshape(T, m, T, m)


# ---------------------------------------------------------------------------
# random model instances (bypassing the formula layer on purpose)


def make_spec(
    y,
    X_fixed=None,
    X_rw1=None,
    X_rw2=None,
    beta1_priors=None,
    sigma_priors=None,
    nu1_priors=None,
    family="gaussian",
    exposure=None,
    gamma=None,
):
    """Assemble a ModelSpec from plain arrays with sane defaults."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]

    def block(X):
        X = np.empty((n, 0)) if X is None else np.asarray(X, dtype=float)
        return X.reshape(n, -1)

    X_fixed, X_rw1, X_rw2 = block(X_fixed), block(X_rw1), block(X_rw2)
    p = X_fixed.shape[1] + X_rw1.shape[1] + X_rw2.shape[1]
    n_sigma = (1 if family == "gaussian" else 0) + X_rw1.shape[1] + X_rw2.shape[1]
    if beta1_priors is None:
        beta1_priors = np.tile([0.0, 2.0], (p, 1))
    if sigma_priors is None:
        sigma_priors = np.tile([0.0, 2.0], (n_sigma, 1))
    if nu1_priors is None:
        nu1_priors = np.tile([0.0, 1.0], (X_rw2.shape[1], 1))
    return ModelSpec(
        y=y,
        X_fixed=X_fixed,
        X_rw1=X_rw1,
        X_rw2=X_rw2,
        beta1_priors=np.asarray(beta1_priors, dtype=float).reshape(p, 2),
        sigma_priors=np.asarray(sigma_priors, dtype=float).reshape(n_sigma, 2),
        nu1_priors=np.asarray(nu1_priors, dtype=float).reshape(-1, 2),
        family=family,
        exposure=None if exposure is None else np.asarray(exposure, dtype=float),
        gamma=None if gamma is None else np.asarray(gamma, dtype=float),
        fixed_names=tuple(f"f{i}" for i in range(X_fixed.shape[1])),
        rw1_names=tuple(f"w{i}" for i in range(X_rw1.shape[1])),
        rw2_names=tuple(f"s{i}" for i in range(X_rw2.shape[1])),
    )


def random_instance(rng: np.random.Generator, family: str = "gaussian"):
    """A random small model plus a sigma array and a response vector.

    Used for the oracle-equivalence sweeps: T <= 10, mixed blocks, sometimes
    missing responses and per-time noise scalings.
    """
    T = int(rng.integers(1, 11))
    p_f = int(rng.integers(0, 3))
    p_1 = int(rng.integers(0, 3))
    p_2 = int(rng.integers(0, 2))
    if p_f + p_1 + p_2 == 0:
        p_1 = 1
    X_fixed = rng.normal(size=(T, p_f))
    X_rw1 = rng.normal(size=(T, p_1))
    X_rw2 = rng.normal(size=(T, p_2))
    beta1 = np.column_stack([rng.normal(0, 1, p_f + p_1 + p_2),
                             rng.uniform(0.3, 2.0, p_f + p_1 + p_2)])
    n_sigma = (1 if family == "gaussian" else 0) + p_1 + p_2
    sigma_priors = np.column_stack([rng.uniform(0, 0.5, n_sigma),
                                    rng.uniform(0.5, 3.0, n_sigma)])
    nu1 = np.column_stack([rng.normal(0, 0.3, p_2), rng.uniform(0.2, 1.0, p_2)])
    gamma = rng.uniform(0.5, 1.5, size=(T, p_1)) if (p_1 and rng.random() < 0.5) else None
    exposure = rng.uniform(0.5, 3.0, T) if family == "poisson" else None

    sigma = rng.uniform(0.05, 1.5, n_sigma)
    if family == "gaussian":
        y = rng.normal(size=T)
    else:
        y = rng.poisson(exposure * np.exp(rng.normal(0.0, 0.7, T))).astype(float)
    if T > 2 and rng.random() < 0.3:
        y = y.copy()
        y[rng.integers(0, T)] = np.nan
    spec = make_spec(
        y,
        X_fixed,
        X_rw1,
        X_rw2,
        beta1_priors=beta1,
        sigma_priors=sigma_priors,
        nu1_priors=nu1,
        family=family,
        exposure=exposure,
        gamma=gamma,
    )
    return spec, sigma


# ---------------------------------------------------------------------------
# dense Newton oracle for the count-family signal mode


def dense_signal_prior(spec: ModelSpec, sigma):
    """Mean and covariance of the stacked signal Z_t state_t."""
    from tvreg.kalman import build_state_space

    ssm = build_state_space(
        spec, sigma, obs_variance=np.ones(spec.n_obs)
    )
    mu, cov = dense_joint_moments(ssm)
    Z = design_rows(spec)
    mean = np.einsum("ti,ti->t", Z, mu)
    cov_sig = np.einsum("ti,tsij,sj->ts", Z, cov, Z)
    return mean, cov_sig


def dense_poisson_mode(spec: ModelSpec, sigma, tol=1e-12, max_iter=200):
    """Newton iteration on the joint signal posterior, fully dense."""
    mean, cov = dense_signal_prior(spec, sigma)
    obs = spec.observed
    u = spec.exposure_vector()
    prec = np.linalg.inv(cov)
    theta = mean.copy()
    for _ in range(max_iter):
        rate = u * np.exp(theta)
        grad = np.where(obs, spec.y - rate, 0.0)
        grad[np.isnan(grad)] = 0.0
        grad = grad - prec @ (theta - mean)
        hess = -np.diag(np.where(obs, rate, 0.0)) - prec
        step = np.linalg.solve(hess, grad)
        new = theta - step
        # crude backtracking to keep the iteration stable
        shrink = 0
        while np.max(np.abs(new - theta)) > 5.0 and shrink < 30:
            new = 0.5 * (theta + new)
            shrink += 1
        delta = np.max(np.abs(new - theta))
        theta = new
        if delta < tol:
            break
    return theta


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
