"""Exception hierarchy shared by the analytic, simulation and CLI layers."""


class FastRetrialError(ValueError):
    """Base class for every error raised by this package."""


class InvalidConfigError(FastRetrialError):
    """A configuration violates a structural invariant (e.g. N < L)."""


class LambertDomainError(FastRetrialError):
    """Argument lies below the branch point -1/e of W0."""


class InfeasibleRateError(FastRetrialError):
    """Arrival rate is not below the sufficient stability threshold."""


class NoPositiveRootError(FastRetrialError):
    """The QoS exponent equation has no positive root (p <= lambda)."""


class UnachievableTargetError(FastRetrialError):
    """No arrival rate meets the requested QoS target."""


class BoundExceededError(FastRetrialError):
    """A design query returned a value beyond the supported range."""


class UndefinedRatioError(FastRetrialError):
    """A ratio estimate was requested with a zero denominator."""
