# File: preview_restore/diffusion/__init__.py

from .schedule import (
    DiffusionSample,
    NoiseSchedule,
    add_noise,
    ddim_step,
    diffusion_loss,
    noise_to,
    x0_from_eps,
)
from .guidance import cfg_combine, grid_successor
