"""Exception types shared across the solver modules."""


class TwoFluidError(Exception):
    """Base class for solver errors."""


class NonconvergenceError(TwoFluidError):
    """An iterative solver hit its iteration limit.

    Carries the final residual (and, for the VI solver, the worst
    complementarity violation) so callers can report how far off it was.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularMatrixError(TwoFluidError):
    """Dense factorization met a pivot that is zero to machine precision."""


class SingularSystemError(TwoFluidError):
    """A system without any Dirichlet constraint (pure Neumann) was requested."""


class OutOfDomainError(TwoFluidError):
    """A point evaluation fell outside every mesh cell."""


class BracketError(TwoFluidError):
    """A root bracket does not contain a sign change."""


class StepFailureError(TwoFluidError):
    """A time-step sub-solve failed; names the sub-step that broke."""

    def __init__(self, substep, cause):
        super().__init__(f"time step failed in sub-step '{substep}': {cause}")
        self.substep = substep
        self.cause = cause


class StagnationError(TwoFluidError):
    """The adaptive controller pushed dt below dt_min on a rejected step."""


class ConfigError(TwoFluidError):
    """Configuration text could not be parsed or holds an invalid value."""

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        if key is not None:
            message = f"key '{key}': {message}"
        super().__init__(message)
        self.line = line
        self.key = key
