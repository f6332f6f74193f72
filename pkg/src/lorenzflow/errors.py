"""Exception hierarchy shared by all modules."""


class LorenzFlowError(Exception):
    """Base class for every error raised by the package."""


class NonInvertibleCdf(LorenzFlowError):
    pass


class DegenerateCurvature(LorenzFlowError):
    pass


class SideMismatch(LorenzFlowError):
    pass


class GridMismatch(LorenzFlowError):
    pass


class MomentDrift(LorenzFlowError):
    pass


class StabilityViolation(LorenzFlowError):
    pass


class PositivityLoss(LorenzFlowError):
    pass


class ConvexityLoss(LorenzFlowError):
    pass


class ConstraintViolation(LorenzFlowError):
    pass


class NonConvergence(LorenzFlowError):
    pass


class ConfigError(LorenzFlowError):
    """Raised for malformed experiment configs; the message names the field."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(f"{field}: {message}" if message else f"{field}: invalid or missing")


class MissingInput(LorenzFlowError):
    pass


class TimedError(LorenzFlowError):
    """Wraps a step error with the simulation time at which it occurred."""

    def __init__(self, time, cause):
        self.time = time
        self.cause = cause
        super().__init__(f"at t={time:.6g}: {type(cause).__name__}: {cause}")
