"""Procedural high-quality images: one antialiased shape on a textured background."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from preview_restore.errors import SpecRangeError
from preview_restore.tensor import Rng

CLASS_NAMES = ("circle", "square", "triangle", "cross")
IMAGE_SIZE = 24
CENTER_RANGE = (6.0, 18.0)
SIZE_RANGE = (4.0, 8.0)
MIN_CONTRAST = 0.5
MAX_TEXTURE = 0.15
SUPERSAMPLE = 8
TEXTURE_GRID = 4


@dataclass(frozen=True)
class ShapeSpec:
    """
    One shape render.

    ``size`` is the radius (circle) or half-extent (other classes) in pixels; pixel
    ``(row, col)`` covers ``[row, row + 1) x [col, col + 1)`` and the centre is
    ``(cx, cy)`` = (column, row) coordinates.
    """

    class_id: int
    cx: float
    cy: float
    size: float
    fg: float
    bg: float
    texture_amp: float = 0.0
    texture_seed: int = 0

    def validate(self):
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise SpecRangeError(f"class_id {self.class_id} outside [0, {len(CLASS_NAMES) - 1}]")
        for name, value in (("cx", self.cx), ("cy", self.cy)):
            if not CENTER_RANGE[0] <= value <= CENTER_RANGE[1]:
                raise SpecRangeError(f"{name}={value} outside {list(CENTER_RANGE)}")
        if not SIZE_RANGE[0] <= self.size <= SIZE_RANGE[1]:
            raise SpecRangeError(f"size={self.size} outside {list(SIZE_RANGE)}")
        if not (-1.0 <= self.fg <= 1.0 and -1.0 <= self.bg <= 1.0):
            raise SpecRangeError(f"intensities fg={self.fg}, bg={self.bg} outside [-1, 1]")
        if abs(self.fg - self.bg) < MIN_CONTRAST:
            raise SpecRangeError(f"contrast |fg - bg| = {abs(self.fg - self.bg):.3f} below {MIN_CONTRAST}")
        if not 0.0 <= self.texture_amp <= MAX_TEXTURE:
            raise SpecRangeError(f"texture_amp={self.texture_amp} outside [0, {MAX_TEXTURE}]")
        return self


def _coverage(spec: ShapeSpec, size: int) -> np.ndarray:
    """Fraction of each pixel inside the shape, by regular supersampling."""
    offsets = (np.arange(size * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys, xs = np.meshgrid(offsets, offsets, indexing="ij")
    dx, dy, r = xs - spec.cx, ys - spec.cy, spec.size
    name = CLASS_NAMES[spec.class_id]
    if name == "circle":
        inside = dx ** 2 + dy ** 2 <= r ** 2
    elif name == "square":
        inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    elif name == "triangle":
        # apex up, base at cy + r, half-width r at the base
        depth = (dy + r) / 2.0
        inside = (dy >= -r) & (dy <= r) & (np.abs(dx) <= depth)
    else:
        arm = r / 3.0
        inside = ((np.abs(dx) <= r) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= r) & (np.abs(dx) <= arm))
    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def value_noise(seed: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """Smooth zero-mean field in [-1, 1] from a cubic zoom of a coarse random grid."""
    coarse = Rng(seed).fork("texture").uniform(-1.0, 1.0, size=(TEXTURE_GRID, TEXTURE_GRID))
    field = ndimage.zoom(coarse, size / TEXTURE_GRID, order=3, mode="nearest", grid_mode=True)
    field = field - field.mean()
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def render_shape(spec: ShapeSpec, size: int = IMAGE_SIZE) -> np.ndarray:
    """Deterministic float32 (size, size) render in [-1, 1]."""
    spec.validate()
    coverage = _coverage(spec, size)
    image = spec.bg + (spec.fg - spec.bg) * coverage
    if spec.texture_amp > 0:
        image = image + spec.texture_amp * value_noise(spec.texture_seed, size)
    return np.clip(image, -1.0, 1.0).astype(np.float32)


def random_shape_spec(rng: Rng, class_id: int) -> ShapeSpec:
    """Draw a valid spec of the given class."""
    fg = float(rng.uniform(-1.0, 1.0))
    gap = float(rng.uniform(MIN_CONTRAST, 1.5))
    bg = fg - gap if fg - gap >= -1.0 else fg + gap
    if not -1.0 <= bg <= 1.0:
        bg = -1.0 if fg > 0 else 1.0
    return ShapeSpec(
        class_id=int(class_id),
        cx=float(rng.uniform(*CENTER_RANGE)),
        cy=float(rng.uniform(*CENTER_RANGE)),
        size=float(rng.uniform(*SIZE_RANGE)),
        fg=fg,
        bg=float(bg),
        texture_amp=float(rng.uniform(0.0, MAX_TEXTURE)),
        texture_seed=int(rng.integers(0, 2 ** 31 - 1)),
    ).validate()
