"""Exception and warning types raised by twincal."""


class TwincalError(Exception):
    """Base class for all twincal errors."""


class InvalidParameterError(TwincalError, ValueError):
    pass


class SingularParametersError(TwincalError, ValueError):
    pass


class DegenerateDenominatorError(TwincalError, ZeroDivisionError):
    pass


class NoSignalError(TwincalError, ValueError):
    pass


class NoPhysicalSolutionError(TwincalError, ValueError):
    pass


class InconsistentMeasurementError(TwincalError, ValueError):
    """Negative discriminant when inverting the dead-time NRF model."""


class OverSubtractionError(TwincalError, ValueError):
    """Background subtraction left a non-positive denominator."""


class InsufficientDataError(TwincalError, ValueError):
    pass


class BudgetExceededError(TwincalError, RuntimeError):
    """Exact enumeration would exceed the configured size budget."""


class ConfigError(TwincalError, ValueError):
    """Malformed scenario file."""


class InconsistentInputsWarning(UserWarning):
    """Estimator inputs are outside the physically consistent range."""


class ValidityWarning(UserWarning):
    """A model is being used near the edge of its validity range."""
