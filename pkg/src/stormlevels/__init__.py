"""Spatial return levels for annual precipitation maxima with dependence-weighted likelihoods."""

__version__ = "0.1.0"

from .dependence import compute_weights, estimate_weights
from .evaluate import coverage_study, holdout_logscore, rl_surface
from .gev import GevParams, gev_cdf, gev_logpdf, gev_quantile
from .model import FitData, HyperPrior, LatentState, ModelSpec, effective_info, log_posterior
from .sampler import ChainOutput, SamplerConfig, adapt_step, run_chain, run_chains
from .simulate import GeneratorConfig, assemble_dataset

__all__ = [
    "__version__", "GevParams", "gev_cdf", "gev_logpdf", "gev_quantile", "compute_weights",
    "estimate_weights", "FitData", "HyperPrior", "LatentState", "ModelSpec", "effective_info",
    "log_posterior", "ChainOutput", "SamplerConfig", "adapt_step", "run_chain", "run_chains",
    "GeneratorConfig", "assemble_dataset", "coverage_study", "holdout_logscore", "rl_surface",
]
