class RegionIdError(Exception):
    """Base class for errors raised by this package."""


class SingularConstraintError(RegionIdError, ValueError):
    pass


class QPInfeasibleError(RegionIdError):
    pass


class ProjectionBlowUpError(RegionIdError):
    pass


class UnboundedRegionError(RegionIdError, ValueError):
    pass


class ContradictionError(RegionIdError):
    """The cumulative parameter region became empty.

    With exact measurements this only happens when the hypothesized task
    model (C, d) does not match what the robot actually runs.
    """


class ConfigError(RegionIdError, ValueError):
    pass


class NoDataError(RegionIdError):
    pass
