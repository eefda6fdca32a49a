"""Exception types raised across the package."""


class MMRError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MMRError):
    pass


class NotSymmetric(MMRError):
    pass


class DimensionTooSmall(MMRError):
    pass


class BadCount(MMRError):
    pass


class InvalidPrior(MMRError):
    pass


class SolveFailed(MMRError):
    pass


class DegenerateResult(MMRError):
    """Solver finished but the risk-equalization residual is too large.

    The offending report is attached so callers can still inspect or save it.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BadScaleFlag(MMRError):
    pass


class ConfigError(MMRError):
    pass
