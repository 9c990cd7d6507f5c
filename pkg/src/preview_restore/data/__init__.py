# File: preview_restore/data/__init__.py

from .shapes import CLASS_NAMES, IMAGE_SIZE, ShapeSpec, random_shape_spec, render_shape, value_noise
from .degrade import DegradeSpec, degrade, quantize, resize_down_up, sample_level
from .dataset import (
    MANIFEST_COLUMNS,
    SPLITS,
    Batch,
    ImagePair,
    PairLoader,
    build_manifest,
    make_pair,
    pair_from_row,
    pair_seed,
    select_split,
)
