"""Exception types raised across the package."""


class SleepCSMAError(Exception):
    """Base class for all package errors."""


class SizeLimitExceeded(SleepCSMAError):
    """The exact state space is larger than the enumeration cap."""


class InfeasibleState(SleepCSMAError, ValueError):
    """A (configuration, transmission) pair is not a state of the chain."""


class ConfigError(SleepCSMAError, ValueError):
    """Invalid scenario or run configuration.

    ``field`` names the offending configuration entry when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class RangeError(SleepCSMAError, ValueError):
    """An argument lies outside its admissible range."""


class DomainError(SleepCSMAError, ValueError):
    """A quantity is undefined for the given arguments."""


class LPNumericalFailure(SleepCSMAError):
    """The linear-program backend returned neither a solution nor a proof of infeasibility."""


class NoPackets(SleepCSMAError):
    """Energy per packet requested for a link that delivered nothing."""


class EmptyTrace(SleepCSMAError):
    """Occupancy requested from a trace that covers zero time."""


class EmptyFrame(SleepCSMAError):
    """A measurement frame of zero length."""


class NonConvergence(SleepCSMAError):
    """An iterative procedure hit its iteration cap."""
