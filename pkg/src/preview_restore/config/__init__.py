# File: preview_restore/config/__init__.py

from .config import RunConfig, SAMPLER_MODES, DEGRADATION_LEVELS
