"""Synthetic degradation pipeline (blur, resize, noise, quantisation) and the four
named degradation levels."""

from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np
from scipy import ndimage

from preview_restore.config import DEGRADATION_LEVELS
from preview_restore.errors import SpecRangeError
from preview_restore.tensor import Rng

DOWN_FACTORS = (1, 2, 4)
QUANT_LEVELS = (0, 32, 16, 8)  # 0: no quantisation
MAX_BLUR = 1.5
MAX_NOISE = 0.15


@dataclass(frozen=True)
class DegradeSpec:
    """
    One degradation pass applied as blur -> down/up resize -> noise -> quantise,
    optionally followed by a ``second`` pass.
    """

    blur_sigma: float = 0.0
    down_factor: int = 1
    noise_sigma: float = 0.0
    quant_levels: int = 0
    second: Optional["DegradeSpec"] = None

    def validate(self):
        if not 0.0 <= self.blur_sigma <= MAX_BLUR:
            raise SpecRangeError(f"blur_sigma={self.blur_sigma} outside [0, {MAX_BLUR}]")
        if self.down_factor not in DOWN_FACTORS:
            raise SpecRangeError(f"down_factor={self.down_factor} not in {DOWN_FACTORS}")
        if not 0.0 <= self.noise_sigma <= MAX_NOISE:
            raise SpecRangeError(f"noise_sigma={self.noise_sigma} outside [0, {MAX_NOISE}]")
        if self.quant_levels not in QUANT_LEVELS:
            raise SpecRangeError(f"quant_levels={self.quant_levels} not in {QUANT_LEVELS}")
        if self.second is not None:
            if self.second.second is not None:
                raise SpecRangeError("only one second pass is supported")
            self.second.validate()
        return self

    @property
    def is_identity(self) -> bool:
        return (self.blur_sigma == 0.0 and self.down_factor == 1 and self.noise_sigma == 0.0
                and self.quant_levels == 0 and self.second is None)

    def to_row(self) -> Dict[str, float]:
        """Flat manifest columns; second-pass fields are empty when there is no second pass."""
        first = {k: v for k, v in asdict(self).items() if k != "second"}
        second = {k: v for k, v in asdict(self.second).items() if k != "second"} if self.second else {}
        row = dict(first)
        for key in first:
            row[f"second_{key}"] = second.get(key, np.nan)
        return row

    @classmethod
    def from_row(cls, row) -> "DegradeSpec":
        def single(prefix: str) -> "DegradeSpec":
            return cls(blur_sigma=float(row[f"{prefix}blur_sigma"]), down_factor=int(row[f"{prefix}down_factor"]),
                       noise_sigma=float(row[f"{prefix}noise_sigma"]), quant_levels=int(row[f"{prefix}quant_levels"]))
        second = None
        if "second_blur_sigma" in row and not np.isnan(float(row["second_blur_sigma"])):
            second = single("second_")
        first = single("")
        return cls(first.blur_sigma, first.down_factor, first.noise_sigma, first.quant_levels, second)


def resize_down_up(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsample by ``factor`` then linear upsample back to the input extent."""
    if factor == 1:
        return image
    h, w = image.shape
    if h % factor or w % factor:
        raise SpecRangeError(f"Image {image.shape} not divisible by down factor {factor}")
    small = image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return ndimage.zoom(small, factor, order=1, mode="nearest", grid_mode=True)


def quantize(image: np.ndarray, levels: int) -> np.ndarray:
    """Uniform quantisation of [-1, 1] to ``levels`` values."""
    if not levels:
        return image
    scaled = np.round((np.clip(image, -1.0, 1.0) + 1.0) / 2.0 * (levels - 1))
    return scaled / (levels - 1) * 2.0 - 1.0


def _single_pass(image: np.ndarray, spec: DegradeSpec, rng: Rng) -> np.ndarray:
    if spec.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, spec.blur_sigma, mode="reflect")
    image = resize_down_up(image, spec.down_factor)
    if spec.noise_sigma > 0:
        image = image + spec.noise_sigma * rng.normal(image.shape, dtype=np.float64)
    return quantize(image, spec.quant_levels)


def degrade(hq: np.ndarray, spec: DegradeSpec, rng: Rng) -> np.ndarray:
    """
    Apply ``spec`` to a (H, W) image in [-1, 1]; the result keeps shape and dtype and is
    clamped to [-1, 1]. The identity spec returns the input values unchanged.
    """
    spec.validate()
    image = np.asarray(hq, dtype=np.float64)
    image = _single_pass(image, spec, rng.fork("first"))
    if spec.second is not None:
        image = _single_pass(image, spec.second, rng.fork("second"))
    return np.clip(image, -1.0, 1.0).astype(np.asarray(hq).dtype)


def sample_level(level: str, rng: Rng, second_pass_prob: float = 0.5) -> DegradeSpec:
    """
    Degradation spec of a named level: ``hq`` identity, ``down4`` factor 2, ``down8_analog``
    factor 4, ``multi`` a randomised blur/resize/noise/quantise pass with an optional
    milder second pass drawn with probability ``second_pass_prob``.
    """
    if level not in DEGRADATION_LEVELS:
        raise SpecRangeError(f"Unknown degradation level '{level}'. Allowed: {list(DEGRADATION_LEVELS)}")
    if level == "hq":
        return DegradeSpec()
    if level == "down4":
        return DegradeSpec(down_factor=2)
    if level == "down8_analog":
        return DegradeSpec(down_factor=4)
    second = None
    if rng.uniform() < second_pass_prob:
        second = DegradeSpec(
            blur_sigma=float(rng.uniform(0.0, 1.0)),
            down_factor=int(rng.choice([1, 2])),
            noise_sigma=float(rng.uniform(0.0, 0.05)),
            quant_levels=int(rng.choice([0, 32])),
        )
    return DegradeSpec(
        blur_sigma=float(rng.uniform(0.5, MAX_BLUR)),
        down_factor=4,
        noise_sigma=float(rng.uniform(0.05, MAX_NOISE)),
        quant_levels=int(rng.choice([32, 16, 8])),
        second=second,
    ).validate()
