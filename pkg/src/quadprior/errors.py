"""Exception types shared across the package."""


class QuadPriorError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(QuadPriorError, ValueError):
    pass


class ImageIOError(QuadPriorError, OSError):
    pass


class NumericError(QuadPriorError, ArithmeticError):
    """Raised when a computation produces non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StateError(QuadPriorError, RuntimeError):
    pass
