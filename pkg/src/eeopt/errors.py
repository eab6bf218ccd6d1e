"""Exception types raised across the package."""


class EEOError(Exception):
    """Base class for all package errors."""


class ShapeError(EEOError, ValueError):
    pass


class NumericError(EEOError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConvergenceError(EEOError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateInputError(EEOError, ValueError):
    pass


class ValidationError(EEOError, ValueError):
    pass


class ConfigError(EEOError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(EEOError, ValueError):
    pass


class ExperimentError(EEOError, RuntimeError):
    """A run failed; the message names the experiment and the cause."""
