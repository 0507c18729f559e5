"""Posterior sampling of full coefficient paths by mean correction.

Given noise sds, the coefficient path given the data is Gaussian, so exact
draws come from one auxiliary simulation plus two smoother passes:

1. draw a path ``alpha_plus`` from the unconditional model, including its
   initial state from N(a1, P1), and pseudo-data ``y_plus`` from it;
2. compute the smoothed means of the real data and of the pseudo-data;
3. return ``smoothed(y) + alpha_plus - smoothed(y_plus)``.

The correction term has the right conditional covariance and mean zero, so
the sum is an exact draw from p(path | y).  Pseudo-observations are masked
wherever y is missing so both smoother passes condition on the same pattern.
"""

from __future__ import annotations

import numpy as np

from .kalman import StateSpace, kalman_smoother


def simulate_states(
    ssm: StateSpace,
    y: np.ndarray,
    rng: np.random.Generator,
    smoothed_mean: np.ndarray | None = None,
) -> np.ndarray:
    """Draw one (T, m) coefficient path from p(path | y) for fixed noise sds.

    ``smoothed_mean`` may pass in a precomputed ``kalman_smoother(ssm, y)``
    mean to avoid repeating that pass across draws at the same sds.  Each
    call consumes the generator; callers wanting parallel draws should hand
    each worker its own spawned generator (``rng.spawn`` / ``SeedSequence``).
    """
    y = np.asarray(y, dtype=float)
    T_len, m = ssm.n_obs, ssm.m
    Z, H, Tmat = ssm.Z, ssm.H, ssm.Tmat
    noise_sd = np.sqrt(ssm.Q)
    k = ssm.noisy_idx.size

    alpha_plus = np.empty((T_len, m))
    y_plus = np.empty(T_len)
    a = ssm.a1 + np.sqrt(ssm.P1diag) * rng.standard_normal(m)
    for t in range(T_len):
        alpha_plus[t] = a
        y_plus[t] = Z[t] @ a + np.sqrt(H[t]) * rng.standard_normal()
        if not ssm.tmat_identity:
            a = Tmat @ a
        if k:
            a[ssm.noisy_idx] += noise_sd[t] * rng.standard_normal(k)

    y_plus[np.isnan(y)] = np.nan

    if smoothed_mean is None:
        smoothed_mean = kalman_smoother(ssm, y).a_smooth
    smoothed_plus = kalman_smoother(ssm, y_plus).a_smooth
    return smoothed_mean + alpha_plus - smoothed_plus
