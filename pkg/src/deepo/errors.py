"""Exception types shared across the package."""


class DeepoError(Exception):
    """Base class for all library-specific errors."""


class NotStable(DeepoError):
    """A matrix that must be Schur stable has spectral radius >= 1."""


class NotSymmetric(DeepoError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class NonFinite(DeepoError):
    """An input, state, or output contains NaN or infinity.

    When raised from an online run, ``records`` carries the step records
    collected up to the failure so the trace can still be written out.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records if records is not None else []


class LagTooSmall(DeepoError):
    """The window length is below the system's observability index."""


class NoConvergence(DeepoError):
    """An iterative solver exhausted its iteration budget."""


class Unstabilizable(NoConvergence):
    """No stabilizing gain could be computed for the estimated dynamics."""


class InsufficientHistory(DeepoError):
    """Not enough samples to form the requested window or data matrix."""


class DegenerateData(DeepoError):
    """Data matrix lacks the rank structure the operation requires."""


class DimensionMismatch(DeepoError):
    """Operands have incompatible shapes."""


class RankDeficient(DeepoError):
    """A matrix required to be invertible is singular or ill-conditioned."""


class Unstable(DeepoError):
    """A policy is infeasible: its closed-loop matrix is not Schur stable."""


class ConfigInvalid(DeepoError):
    """A scenario configuration failed validation."""
