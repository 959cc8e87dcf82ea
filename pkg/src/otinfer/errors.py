"""Exception types raised across the package."""


class OTInferenceError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(OTInferenceError, ValueError):
    pass


class Infeasible(OTInferenceError):
    """Every permutation crosses an infinite-cost cell."""


class TooLarge(OTInferenceError, ValueError):
    pass


class NotEnumerable(OTInferenceError):
    pass


class OutOfDomain(OTInferenceError, ValueError):
    pass


class BudgetExceeded(OTInferenceError):
    """Exhaustive enumeration would exceed the configured budget."""


class MaxIterations(OTInferenceError):
    """Iteration budget exhausted; ``result`` holds the current bracket."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class TooManyPlayers(OTInferenceError, ValueError):
    pass


class ConfigError(OTInferenceError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""
