"""Exception types raised across the package."""


class EnsembleRegError(Exception):
    """Base class for all package errors."""


class InvalidDistributionError(EnsembleRegError, ValueError):
    """A weight vector is negative somewhere or does not sum to one."""


class EmptyCellError(EnsembleRegError, ValueError):
    """A statistic was requested on an empty list of realizations."""


class InvalidArgumentError(EnsembleRegError, ValueError):
    """Arguments are individually valid but mutually incompatible."""


class ConvergenceError(EnsembleRegError, RuntimeError):
    """The iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, worst_residual):
        super().__init__(message)
        self.worst_residual = worst_residual
