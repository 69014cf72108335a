"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` (bad input, CLI exit 2)
and ``NumericalError`` (solver failure, CLI exit 3).
"""


class SinkhornDescentError(Exception):
    pass


class ValidationError(SinkhornDescentError, ValueError):
    pass


class NumericalError(SinkhornDescentError, ArithmeticError):
    pass


class EmptySupport(ValidationError):
    pass


class NegativeWeight(ValidationError):
    pass


class ZeroMass(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class AllBelowThreshold(ValidationError):
    pass


class SingleAtom(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DimensionTooHigh(ValidationError):
    pass


class SolverBlowup(NumericalError):
    """NaN/Inf produced inside an iteration (inputs were finite)."""


class MaxIterations(NumericalError):
    """Fixed-point solve ran out of sweeps.

    ``last`` holds the final iterate (a ``SinkhornPotentials``) so callers
    can inspect or reuse it; ``residual`` is its sup-norm residual.
    """

    def __init__(self, message, last=None, residual=float("nan")):
        super().__init__(message)
        self.last = last
        self.residual = residual


class BacktrackingFailed(NumericalError):
    pass
