"""Robust Bayesian bounds for refutable partially identified models."""

__version__ = "0.1.0"

from .core import (
    DeviationPrior,
    DiscretizedObservables,
    MixturePrior,
    PriorFamily,
    check_testable_implication,
    defier_support,
)
from .exceptions import (
    ConvergenceError,
    DataError,
    DomainError,
    GridError,
    InfeasibleError,
    NumericalError,
    RefutableError,
)
from .late import BoundPair, LATEModel, conditional_bounds, minimal_deviation_late, wald_ratio
from .pipeline import DecreasingDensitySet, MixtureFamily, RobustLATE, RobustResult, run, run_prior_set
from .posterior import DPMixturePosterior, DPMMConfig, GridSpec, discretize

__all__ = [
    "BoundPair",
    "ConvergenceError",
    "DataError",
    "DPMixturePosterior",
    "DPMMConfig",
    "DecreasingDensitySet",
    "DeviationPrior",
    "DiscretizedObservables",
    "DomainError",
    "GridError",
    "GridSpec",
    "InfeasibleError",
    "LATEModel",
    "MixtureFamily",
    "MixturePrior",
    "NumericalError",
    "PriorFamily",
    "RefutableError",
    "RobustLATE",
    "RobustResult",
    "check_testable_implication",
    "conditional_bounds",
    "defier_support",
    "discretize",
    "minimal_deviation_late",
    "run",
    "run_prior_set",
    "wald_ratio",
]
