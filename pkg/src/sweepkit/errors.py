"""Exception hierarchy shared by every sweepkit module."""


class SweepError(Exception):
    """Base class for all sweepkit errors."""


class RegionViolation(SweepError):
    """Point is at or beyond the prox-regularity radius, projection may be non-unique."""


class PointNotInSet(SweepError):
    pass


class NotANormal(SweepError):
    pass


class InfeasibleInitialPoint(SweepError):
    pass


class KernelDomain(SweepError):
    """Volterra kernel evaluated outside s <= t."""


class GridMismatch(SweepError):
    pass


class NegativeInput(SweepError):
    pass


class R0TooSmall(SweepError):
    pass


class ConfigError(SweepError):
    pass


class MaxIterationsExceeded(SweepError):
    """Raised by the selection iteration; carries the partial result."""

    def __init__(self, message, z=None, traj=None, report=None):
        super().__init__(message)
        self.z = z
        self.traj = traj
        self.report = report
