"""Exception hierarchy shared by the solvers, simulator and CLI."""


class OptStopError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(OptStopError, ValueError):
    """An argument lies outside the domain of a special function."""


class BracketError(OptStopError):
    """Root-finding bracket endpoints do not straddle a sign change."""


class ConvergenceError(OptStopError):
    """An iterative method exhausted its iteration or subdivision budget."""


class InfeasibleError(OptStopError):
    """The constraint set of an optimization problem is empty."""


class IllPosedError(OptStopError):
    """The problem has no finite optimum as configured (e.g. unbounded power)."""
