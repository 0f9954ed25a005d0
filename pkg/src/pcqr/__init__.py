"""Convex quantile regression with an L2 penalty against quantile crossing."""

__version__ = "0.1.0"

from .solver import ConicProgram, Solution, SolverSettings, Status, solve, validate
from .estimator import (
    CROSSING_TOL, Dataset, FitError, GammaSearchError, GammaSearchResult, MultiQuantileModel,
    QuantileModel, build_cqr, build_pcqr, build_scqr, detect_crossing, evaluate, fit,
    fit_cqr, fit_pcqr, fit_scqr, predict, search_gamma,
)
from .dgp import NoiseSpec, ScenarioConfig, composed_error_cdf, generate, split_sigma, true_quantile
from .metrics import (
    AggregateCell, MetricsRecord, aggregate, coverage_error, mse, quantile_property_check,
    ramp_loss,
)

__all__ = [
    "ConicProgram", "Solution", "SolverSettings", "Status", "solve", "validate",
    "CROSSING_TOL", "Dataset", "FitError", "GammaSearchError", "GammaSearchResult",
    "MultiQuantileModel", "QuantileModel", "build_cqr", "build_pcqr", "build_scqr",
    "detect_crossing", "evaluate", "fit", "fit_cqr", "fit_pcqr", "fit_scqr", "predict",
    "search_gamma", "NoiseSpec", "ScenarioConfig", "composed_error_cdf", "generate",
    "split_sigma", "true_quantile", "AggregateCell", "MetricsRecord", "aggregate",
    "coverage_error", "mse", "quantile_property_check", "ramp_loss",
]
