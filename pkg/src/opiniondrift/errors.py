"""Exception types raised across the package."""


class OpinionDriftError(Exception):
    """Base class for all package errors."""


class AllAtomic(OpinionDriftError):
    """The partition carries no absolutely continuous mass."""


class DegenerateWindow(OpinionDriftError):
    """A confidence window holds (numerically) no mass."""


class MonotonicityViolation(OpinionDriftError):
    """Mapped edges went out of order by more than the merge tolerance."""


class HorizonExceeded(OpinionDriftError):
    """A schedule was queried past its final step."""


class NotConverged(OpinionDriftError):
    """A run hit its step limit before reaching a clustered state."""


class NoBasin(OpinionDriftError):
    """No initial opinion was attracted to the input center."""


class InsufficientPoints(OpinionDriftError):
    """Too few sweep points survived filtering to fit a line."""


class ConfigError(OpinionDriftError, ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class StepError(OpinionDriftError):
    """Wraps an error raised while advancing a run, recording the step."""

    def __init__(self, step: int, cause: Exception) -> None:
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause
