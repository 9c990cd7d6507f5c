# File: preview_restore/__init__.py

from .errors import (
    AdapterError,
    CheckpointError,
    ConfigError,
    NonFiniteError,
    PhaseOrderError,
    RestoreError,
    SamplingError,
    ScheduleError,
    ShapeError,
    SpecRangeError,
)
from .config import RunConfig
from .bundle import PHASES, RestorationNets, build_nets, load_nets, save_nets
from .sampling import SamplerConfig, adares_sample, creative_sample, ddim_sample

__version__ = "0.1.0"
