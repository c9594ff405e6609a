"""Exception hierarchy shared by all steinlab modules."""


class SteinlabError(Exception):
    """Base class for library errors."""


class ConfigError(SteinlabError, ValueError):
    """Invalid experiment configuration."""


class CoincidentPoints(SteinlabError, ValueError):
    """The kernel was evaluated on (or numerically on) its diagonal."""


class QuadratureBudgetExceeded(SteinlabError, RuntimeError):
    """An adaptive rule hit its node budget before reaching tolerance."""


class SupportExceedsCarrier(SteinlabError, ValueError):
    """A field is supported outside the ball carrying the configuration."""


class InvalidOrder(SteinlabError, ValueError):
    """Cumulant or operator order out of range."""


class DegenerateProfile(SteinlabError, ValueError):
    """Radial profile with zero L2 mass."""


class EmptySample(SteinlabError, ValueError):
    """Not enough samples for an estimator."""


class UnbalancedProfile(UserWarning):
    """Profile does not satisfy the cubic balance condition."""
