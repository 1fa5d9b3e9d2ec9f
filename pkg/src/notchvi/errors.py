"""Exception hierarchy shared by all notchvi modules."""


class NotchVIError(Exception):
    """Base class for every error raised by this package."""


class OutsideDomain(NotchVIError, ValueError):
    pass


class UnsupportedRegime(NotchVIError):
    pass


class NonMonotone(NotchVIError):
    """The ratio sequence of an eps-family does not settle down."""


class MisalignedNotch(NotchVIError, ValueError):
    pass


class EmptyNotch(NotchVIError, ValueError):
    pass


class NonPositiveDiagonal(NotchVIError, ValueError):
    pass


class NotPositiveDefinite(NotchVIError, ValueError):
    pass


class TooLarge(NotchVIError, ValueError):
    pass


class NoValidActiveSet(NotchVIError):
    pass


class SweepTooShort(NotchVIError, ValueError):
    pass


class ConfigError(NotchVIError, ValueError):
    """Bad or missing configuration value; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NotConverged(NotchVIError):
    """Iterative solver stopped at ``max_iter``.

    ``solution`` and ``stats`` carry the last iterate so callers can inspect it.
    """

    def __init__(self, message, solution=None, stats=None):
        super().__init__(message)
        self.solution = solution
        self.stats = stats
