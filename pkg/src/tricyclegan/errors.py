"""Exception types raised across the package."""


class TricycleError(Exception):
    """Base class for all package errors."""


class ParameterError(TricycleError, ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(TricycleError, ValueError):
    """A configuration value or combination is invalid."""


class NumericError(TricycleError, FloatingPointError):
    """A non-finite value reached a numeric routine."""


class DatasetError(TricycleError):
    """Dataset layout or contents are invalid."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class ResampleRequired(TricycleError):
    """A sampled template is unusable and must be redrawn."""
