"""Hierarchical Bayesian data selection with per-observation fidelity parameters."""

from ._accel import backend
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    EmptySelectionError,
    FidselError,
    NumericError,
    OptimizationError,
    SetupError,
)

__version__ = "0.1.0"
