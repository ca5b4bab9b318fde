"""Exception types raised by the integrators and their supporting numerics."""


class CisdcError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CisdcError, ValueError):
    pass


class FactorizationError(CisdcError, ArithmeticError):
    """Zero pivot met during an LU factorization without pivoting."""

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class SolveError(CisdcError, ArithmeticError):
    """A linear or nonlinear stage solve failed."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericError(CisdcError, ArithmeticError):
    """An iterative numerical method did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularJacobianError(NumericError):
    pass


class NoConvergenceError(NumericError):
    pass


class SingularStageError(CisdcError, ArithmeticError):
    """An implicit stage matrix ``1 - kappa * weight`` is singular."""


class CapabilityError(CisdcError, TypeError):
    """The problem does not provide an operation required by a scheme."""


class StageError(CisdcError):
    """A stage failure annotated with where in the time stepping it happened."""

    def __init__(self, message, step=None, sweep=None, node=None):
        super().__init__(message)
        self.step = step
        self.sweep = sweep
        self.node = node
