# File: preview_restore/sampling/__init__.py

from .sampler import (
    SamplerConfig,
    TrajectoryLog,
    TrajectoryRecord,
    adares_sample,
    cfg_eps,
    creative_sample,
    ddim_sample,
    delta_indicator,
    initial_noise,
    reference_row,
    squared_distance,
)
from .runner import RestoreResult, restore_images, restore_rows
