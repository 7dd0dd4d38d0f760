"""Exception types raised by the solvers and the simulator."""


class MOTError(Exception):
    """Base class for package errors."""


class ValidationError(MOTError, ValueError):
    """Invalid user input (atoms, weights, payoff or configuration)."""


class GridOverflowError(MOTError):
    """The requested barycentric grid has more nodes than allowed."""


class ConvergenceError(MOTError):
    """The obstacle iteration did not reach its fixed-point tolerance."""

    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class NonPlanarError(MOTError):
    """No candidate control direction is planar at the requested point."""


class InternalError(MOTError, RuntimeError):
    """An invariant that should hold by construction was violated."""
