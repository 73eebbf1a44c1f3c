"""Exception taxonomy shared across the package."""


class LCSparseError(Exception):
    """Base class for all package errors."""


class ConfigError(LCSparseError, ValueError):
    """Invalid hyperparameters, schedule or configuration file."""


class DataError(LCSparseError, ValueError):
    """Input data that cannot be used (bad labels, empty data, ...)."""


class DimensionError(DataError):
    """Matrices whose shapes do not fit together."""


class NonFiniteError(DataError):
    """NaN or Inf where finite values are required."""


class FormatError(DataError):
    """Base for on-disk format violations."""


class BadMagicError(FormatError):
    pass


class VersionError(BadMagicError):
    """Model file with an unknown or mismatched version tag."""


class TruncatedError(FormatError):
    pass


class UnsupportedDTypeError(FormatError):
    pass


class NumericalError(LCSparseError, ArithmeticError):
    """A linear system that could not be solved reliably."""


class DivergenceError(LCSparseError, RuntimeError):
    """Objective increased in a regime where descent is guaranteed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceWarning(UserWarning):
    pass
