"""Exception types raised by the solver layers."""


class ParshootError(Exception):
    """Base class for all package errors."""


class ProblemDefinitionError(ParshootError):
    """A problem evaluator returned data of the wrong shape or kind."""


class LegendreViolation(ParshootError):
    """A Hessian block required to be positive definite is singular.

    Carries the offending smallest eigenvalue so callers can report the
    margin that failed.
    """

    def __init__(self, message, smallest_eigenvalue=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class NoConvergence(ParshootError):
    """An iteration hit its cap before reaching tolerance."""

    def __init__(self, message, residual=None, iterate=None, report=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate
        self.report = report


class PropagationError(ParshootError):
    """Time stepping failed; carries the step index and time of failure."""

    def __init__(self, message, step_index=None, time=None):
        super().__init__(message)
        self.step_index = step_index
        self.time = time


class SingularNormalMatrix(ParshootError):
    """The Gauss-Newton normal matrix is numerically rank deficient.

    Signals that the shooting derivative is not one-to-one at the iterate.
    """

    def __init__(self, message, singular_values=None, report=None):
        super().__init__(message)
        self.singular_values = singular_values
        self.report = report


class InsufficientData(ParshootError):
    """Not enough usable iterates to estimate a convergence order."""


class InternalError(ParshootError):
    """An invariant the implementation relies on was violated."""
