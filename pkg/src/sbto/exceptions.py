class SbtoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SbtoError, ValueError):
    """Invalid configuration: unknown or missing keys, bad values, unresolvable channels."""

    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class NumericalError(SbtoError, ArithmeticError):
    """A covariance could not be repaired into a usable factorization."""

    def __init__(self, message, eigenvalue=None):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class SolverFailure(SbtoError, RuntimeError):
    """The optimizer produced no finite-cost solution.

    The partially filled run record is attached so callers can still log it.
    """

    def __init__(self, message, record=None):
        self.record = record
        super().__init__(message)


class TrajectoryFormatError(SbtoError, ValueError):
    """A trajectory file does not match the expected column layout."""
