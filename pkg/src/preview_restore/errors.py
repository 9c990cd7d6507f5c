"""Exception hierarchy shared by every sub-package."""


class RestoreError(RuntimeError):
    """Base class for all errors raised by preview_restore."""


class ShapeError(RestoreError, ValueError):
    """Operand shapes do not conform for a primitive or a network block."""


class NonFiniteError(RestoreError, FloatingPointError):
    """A tensor operation produced NaN or Inf."""


class OptimizerStateError(RestoreError):
    """Optimizer state slots do not line up with the parameters."""


class ScheduleError(RestoreError, ValueError):
    """Time-step outside the schedule or a degenerate alpha/beta."""


class AdapterError(RestoreError):
    """Low-rank adapter missing or in the wrong state for the call."""


class SamplingError(RestoreError):
    """Sampling aborted; ``step`` is the grid index that failed."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class ConfigError(RestoreError, ValueError):
    """Invalid configuration file, key or value."""


class PhaseOrderError(RestoreError):
    """A training phase was started from the wrong checkpoint phase."""


class CheckpointError(RestoreError):
    """Unreadable or inconsistent checkpoint container."""


class SpecRangeError(RestoreError, ValueError):
    """A shape or degradation spec lies outside its declared ranges."""
