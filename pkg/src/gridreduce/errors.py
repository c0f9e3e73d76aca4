"""Exception hierarchy shared by all modules."""


class GridReduceError(Exception):
    """Base class for package errors."""


class CaseError(GridReduceError, ValueError):
    """Invalid or inconsistent case data."""


class SingularNetworkError(GridReduceError, ArithmeticError):
    """A matrix that must be inverted is singular or nearly so."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class RankDeficientError(SingularNetworkError):
    """Regression matrix lacks full column rank (input not persistently exciting)."""


class NumericalError(GridReduceError, ArithmeticError):
    """Non-finite value encountered during a time-stepping run."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class OperatingPointError(CaseError):
    """Operating point does not satisfy the network equations."""

    def __init__(self, message, mismatch=None):
        super().__init__(message)
        self.mismatch = mismatch


class StabilityError(GridReduceError, ValueError):
    """Identified model has poles on or outside the unit circle."""
