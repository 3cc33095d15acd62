"""Exception hierarchy shared by all modules."""


class DemixError(Exception):
    """Base class for library errors."""


class ParameterError(DemixError, ValueError):
    """Invalid or infeasible parameter combination."""


class DomainError(DemixError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(DemixError, ValueError):
    """Vector or matrix dimensions do not agree."""


class SamplingError(DemixError, RuntimeError):
    """Rejection sampling exhausted its retry budget."""


class IllConditionedPsfError(DemixError, ValueError):
    """A point-spread-function spectrum is too close to zero to divide by."""


class InvertibilityError(DemixError, ArithmeticError):
    """The certificate interpolation system is numerically singular."""

    def __init__(self, message, cond=None, wg_norm=None):
        super().__init__(message)
        self.cond = cond
        self.wg_norm = wg_norm


class NumericalFailure(DemixError, ArithmeticError):
    """NaN or Inf encountered inside an iterative solver."""
