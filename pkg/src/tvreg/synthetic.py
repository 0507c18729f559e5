"""Reference synthetic dataset: two drifting slopes plus a wandering level.

Used by the ``simulate`` CLI subcommand and the acceptance tests.  The
generator matches the published recipe distributionally (same walks, noise
scales and predictors) but uses numpy streams, so draws are reproducible per
seed here without being byte-compatible with any other tool.
"""

from __future__ import annotations

import numpy as np
import pandas as pd


def simulate_example_data(n: int = 100, seed: int = 1) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Generate (data, truth) frames of length ``n``.

    data: columns y, x1, x2.  truth: the latent paths rw (time-varying
    intercept), beta1 and beta2 (slopes on x1, x2) whose sum with noise
    produced y.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    beta1 = np.cumsum(np.concatenate([[0.5], rng.normal(0.0, 0.05, n - 1)]))
    beta2 = np.cumsum(np.concatenate([[-1.0], rng.normal(0.0, 0.15, n - 1)]))
    x1 = rng.normal(2.0, 1.0, n)
    x2 = np.cos(np.arange(1, n + 1))
    rw = np.cumsum(rng.normal(0.0, 0.5, n))
    signal = rw + beta1 * x1 + beta2 * x2
    y = signal + rng.normal(0.0, 0.5, n)
    data = pd.DataFrame({"y": y, "x1": x1, "x2": x2})
    truth = pd.DataFrame({"rw": rw, "beta1": beta1, "beta2": beta2})
    return data, truth
