"""Exception hierarchy.

The CLI maps ``DataError`` subclasses to exit code 2 and ``NumericalError``
subclasses to exit code 3.
"""


class SlowdefError(Exception):
    """Base class for all package errors."""


class DataError(SlowdefError):
    """Bad input data, shapes, or configuration."""


class FormatError(DataError):
    pass


class TruncationError(FormatError):
    pass


class DomainError(DataError, ValueError):
    pass


class DimensionError(DataError, ValueError):
    pass


class ConfigError(DataError):
    pass


class TopologyError(DataError):
    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class TrainingSetupError(DataError):
    pass


class IllPosedFitError(DataError):
    pass


class NumericalError(SlowdefError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, params=None, residual=None):
        super().__init__(message)
        self.params = params
        self.residual = residual
