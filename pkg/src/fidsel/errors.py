"""Exception hierarchy.  The CLI maps these onto exit codes."""


class FidselError(Exception):
    """Base class for all package errors."""


class DomainError(FidselError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(FidselError, ArithmeticError):
    """A numerical procedure failed (factorization, root finding, ...)."""


class CapacityError(FidselError, ValueError):
    """A problem is too large for exact enumeration."""


class ConfigError(FidselError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class SetupError(FidselError, ValueError):
    """A sampler was started from an invalid state."""


class EmptySelectionError(FidselError, ValueError):
    """A fidelity threshold removed every observation."""


class OptimizationError(NumericError):
    """Every optimizer restart failed; carries the best point seen."""

    def __init__(self, message, best_x=None, best_value=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_value = best_value
