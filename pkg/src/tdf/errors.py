"""Exception types raised by the tdf package."""


class TDFError(Exception):
    """Base class for all package errors."""


class TensorFormatError(TDFError, ValueError):
    """A tensor, Tucker or chart file is malformed or inconsistent."""


class NotMinimalError(TDFError, ValueError):
    """A Tucker representation is not minimal (dependent factors or rank-deficient core)."""


class CommonComplementViolation(TDFError, ValueError):
    """The target point lies outside the chart domain of the base point."""


class NotInTangentSpace(TDFError, ValueError):
    """An ambient tensor is not an element of the tangent space at the base point."""


class SingularCore(TDFError, ArithmeticError):
    """A core matricization Gram matrix is numerically singular."""


class MaxIterationsExceeded(TDFError, RuntimeError):
    """An iterative projection solver stopped before meeting its tolerance.

    The best iterate found is kept on ``report`` so callers can still use it.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RankDegeneracy(TDFError, ArithmeticError):
    """The reduced trajectory left the fixed-rank manifold during integration."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
