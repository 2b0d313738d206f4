"""Exception hierarchy shared by every subpackage."""


class FilterPruneError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FilterPruneError, ValueError):
    """Invalid hyperparameter, schedule, or architecture setting."""


class DimensionError(FilterPruneError, ValueError):
    """Operand shapes are incompatible."""


class InputError(FilterPruneError, ValueError):
    """Data values are outside the accepted domain (labels, images, subsets)."""


class UsageError(FilterPruneError, RuntimeError):
    """An API was called in a state where it cannot run."""


class IncompatibilityError(FilterPruneError, ValueError):
    """A checkpoint does not match the expected architecture."""


class FormatError(FilterPruneError, ValueError):
    """A serialized payload is malformed or truncated."""


class InvariantViolation(FilterPruneError, RuntimeError):
    """Internal consistency rule broken (e.g. a mask that differs inside an alignment group)."""


class DivergenceError(FilterPruneError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
