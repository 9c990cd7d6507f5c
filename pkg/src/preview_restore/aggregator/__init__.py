# File: preview_restore/aggregator/__init__.py

from .aggregator import (
    AggregatorNet,
    SFTHead,
    aggregate,
    noisy_preview_variant,
    sft_fuse,
    spatial_concat,
    spatial_split,
)
