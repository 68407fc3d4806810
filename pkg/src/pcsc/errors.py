"""Exception hierarchy shared by all laboratory modules."""


class PcscError(Exception):
    """Base class for all laboratory errors."""


class GridMismatch(PcscError):
    """Fields from different grids were combined."""


class SingularOperator(PcscError):
    """A linear solve was requested for an incompatible right-hand side."""


class NoConvergence(PcscError):
    """An iterative linear solve stalled before reaching its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DegenerateKernel(PcscError):
    """The numerical kernel of the adjoint operator is not one-dimensional."""


class WrongRegime(PcscError):
    """An operation was invoked outside its curvature-sign regime."""


class StarViolated(PcscError):
    """The weighted-mean necessary condition on g does not hold."""


class ConstantInput(PcscError):
    """A non-constant seed field was required."""


class NewtonDiverged(PcscError):
    """Newton iteration left its convergence basin."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class JacobianSingular(PcscError):
    """The Newton linearization lost invertibility (indefinite coefficient)."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class NoNegativePart(PcscError):
    """g has no negative values, so no constant subsolution exists."""


class WrongSignClass(PcscError):
    """g is outside the sign class required by the construction."""


class OrderingViolated(PcscError):
    """Sub/supersolution ordering or verification failed."""


class MaxIters(PcscError):
    """An iteration reached its step budget before converging."""


class BisectionFailed(PcscError):
    """No bracket was found for the feasibility bisection."""


class LineSearchFailed(PcscError):
    """Backtracking could not produce an acceptable descent step."""


class NonNegativeMultiplier(PcscError):
    """The recovered constraint multiplier was not negative."""


class ConfigError(PcscError):
    """A configuration document failed validation."""


class UnresolvedMode(ConfigError):
    """A requested Fourier mode is at or beyond the grid Nyquist limit."""
