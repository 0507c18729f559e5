"""Bayesian regression where chosen coefficients follow random walks.

The coefficient paths are integrated out of the likelihood with a Kalman
filter, a low-dimensional MCMC explores the noise sds, and full paths are
recovered per draw by simulation smoothing; count responses use an iterated
Gaussian working model with importance-weight correction.
"""

__version__ = "0.1.0"

from .diagnostics import ess, pp_check, predict, split_rhat, summarize
from .formula import FormulaAst, RwBlock, format_formula, parse_formula
from .glmapprox import ApproxModel, approx_log_marginal, gaussian_approximation, importance_weight
from .kalman import StateSpace, build_state_space, kalman_filter, kalman_smoother
from .model import ModelSpec, SigmaVector, build_model, log_prior
from .sampler import PosteriorDraws, SamplerConfig, log_marginal_posterior, run
from .simsmooth import simulate_states
from .synthetic import simulate_example_data

__all__ = [
    "__version__",
    "ApproxModel",
    "FormulaAst",
    "ModelSpec",
    "PosteriorDraws",
    "RwBlock",
    "SamplerConfig",
    "SigmaVector",
    "StateSpace",
    "approx_log_marginal",
    "build_model",
    "build_state_space",
    "ess",
    "format_formula",
    "gaussian_approximation",
    "importance_weight",
    "kalman_filter",
    "kalman_smoother",
    "log_marginal_posterior",
    "log_prior",
    "parse_formula",
    "pp_check",
    "predict",
    "run",
    "simulate_example_data",
    "simulate_states",
    "split_rhat",
    "summarize",
]
