"""Exception hierarchy shared by all modules."""


class WienerDCError(Exception):
    """Base class for library errors."""


class ContractError(WienerDCError, ValueError):
    """An input violates a documented precondition."""


class DegenerateError(WienerDCError, ValueError):
    """The input is well formed but carries no usable information."""


class EvaluationError(WienerDCError, ArithmeticError):
    """A function produced a non-finite value or overflowed."""


class ModelError(WienerDCError, ValueError):
    """An autocovariance model is not a valid covariance."""


class NotPositiveDefiniteError(ModelError):
    """A covariance matrix failed to factorize."""


class ResourceError(WienerDCError, MemoryError):
    """The requested size exceeds what the exact algorithm supports."""


class InconsistencyError(WienerDCError, ArithmeticError):
    """A quantity that must be nonnegative came out negative beyond tolerance."""


class ConfigError(WienerDCError, ValueError):
    """A run configuration failed to parse or validate."""


class PrecisionWarning(UserWarning):
    """A Monte Carlo budget is too small for a meaningful estimate."""
