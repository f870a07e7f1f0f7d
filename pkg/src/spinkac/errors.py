"""Shared exception types.

ValueError subclasses flag bad inputs (caller mistakes); RuntimeError
subclasses flag numerical failures inside otherwise valid calls.
"""


class CapacityError(ValueError):
    """Requested size exceeds an enumeration or memory gate."""


class ModelFormatError(ValueError):
    """Model file violates the documented schema."""


class DegenerateProfileError(ValueError):
    """A block magnetization sits on the boundary (|m| = 1)."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed; carries the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FitError(RuntimeError):
    """Not enough usable samples to fit a rate."""
