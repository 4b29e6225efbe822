"""Exception types shared across the package."""


class VBesovError(Exception):
    """Base class for all package errors."""


class ValidationError(VBesovError, ValueError):
    """Invalid input: bad parameters, misaligned sets, out-of-box points."""


class NumericalFailure(VBesovError, ArithmeticError):
    """An iterative solver did not converge.

    ``bracket`` holds the last (lo, hi) interval when one exists.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class NumericalWarning(UserWarning):
    """Soft numerical check failed (result still returned)."""
