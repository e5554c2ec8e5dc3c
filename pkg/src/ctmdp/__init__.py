"""Solvers and verification tools for finite continuous-time Markov decision processes."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .model import (
    CtmdpModel,
    PolicyDeterministic,
    PolicyRandomized,
    ValidationReport,
    load_model,
    save_model,
    validate_model,
)
from .discounted import exact_discounted_value, value_iteration
from .average import vanishing_discount
from .oracle import brute_force_optimal_average, exact_average_cost

__all__ = [
    "CtmdpModel",
    "PolicyDeterministic",
    "PolicyRandomized",
    "ValidationReport",
    "brute_force_optimal_average",
    "exact_average_cost",
    "exact_discounted_value",
    "load_model",
    "save_model",
    "validate_model",
    "value_iteration",
    "vanishing_discount",
]
