"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class RemezConvergenceError(RuntimeError):
    """Raised when the Remez exchange fails to converge.

    The last ripple estimate is kept on ``delta`` so callers can decide whether
    the partial design is usable.
    """

    def __init__(self, message: str, delta: float, iterations: int):
        super().__init__(f"{message} (delta={delta:.3e} after {iterations} iterations)")
        self.delta = delta
        self.iterations = iterations


class DatasetFormatError(ValueError):
    """Binary file could not be parsed. ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class NumericalError(RuntimeError):
    """Non-finite value encountered during network evaluation or training."""
