"""Full-reference image metrics: PSNR, SSIM and SSIM of the Laplacian band."""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage, signal

from preview_restore.errors import ShapeError

PSNR_CAP = 99.0
DATA_RANGE = 2.0
WINDOW_SIZE = 7
WINDOW_SIGMA = 1.5


def _pair(a, b, name: str):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _plane(image: np.ndarray, name: str) -> np.ndarray:
    plane = np.squeeze(image)
    if plane.ndim != 2:
        raise ShapeError(f"{name}: expected a single 2-D image, got shape {image.shape}")
    return plane


def psnr(a, b, data_range: float = DATA_RANGE) -> float:
    """``10 log10(range^2 / MSE)`` in dB, capped at 99 for identical images."""
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse)))


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    coords = np.arange(size) - (size - 1) / 2.0
    profile = np.exp(-coords ** 2 / (2.0 * sigma ** 2))
    window = np.outer(profile, profile)
    return window / window.sum()


def ssim(a, b, data_range: float = DATA_RANGE) -> float:
    """
    Mean local SSIM over the valid region of a 7x7 Gaussian window (sigma 1.5) with
    ``C1 = (0.01 R)^2`` and ``C2 = (0.03 R)^2``.

    Raises:
        ShapeError: Shapes differ, or the image is smaller than the window.
    """
    a, b = _pair(a, b, "ssim")
    a, b = _plane(a, "ssim"), _plane(b, "ssim")
    if min(a.shape) < WINDOW_SIZE:
        raise ShapeError(f"ssim: image {a.shape} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    window = gaussian_window()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2

    def local(x):
        return signal.convolve2d(x, window, mode="valid")

    mu_a, mu_b = local(a), local(b)
    var_a = local(a * a) - mu_a ** 2
    var_b = local(b * b) - mu_b ** 2
    cov = local(a * b) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(np.mean(score))


def laplacian_band(image) -> np.ndarray:
    return ndimage.laplace(np.asarray(image, dtype=np.float64), mode="reflect")


def band_ssim(a, b, data_range: float = DATA_RANGE) -> float:
    """SSIM of the Laplacian high-frequency bands of ``a`` and ``b``."""
    a, b = _pair(a, b, "band_ssim")
    return ssim(laplacian_band(_plane(a, "band_ssim")), laplacian_band(_plane(b, "band_ssim")), data_range)


@dataclass
class MetricReport:
    """Per-image scores of a restored set against its references."""

    names: List[str] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)
    band_ssim: List[float] = field(default_factory=list)

    @classmethod
    def evaluate(cls, restored: Sequence[np.ndarray], references: Sequence[np.ndarray],
                 names: Sequence[str] = ()) -> "MetricReport":
        if len(restored) != len(references):
            raise ShapeError(f"MetricReport: {len(restored)} images vs {len(references)} references")
        report = cls()
        for index, (image, reference) in enumerate(zip(restored, references)):
            report.names.append(names[index] if index < len(names) else str(index))
            report.psnr.append(psnr(image, reference))
            report.ssim.append(ssim(image, reference))
            report.band_ssim.append(band_ssim(image, reference))
        return report

    @property
    def size(self) -> int:
        return len(self.psnr)

    def mean(self, metric: str) -> float:
        return float(np.mean(getattr(self, metric))) if self.size else float("nan")

    def std(self, metric: str) -> float:
        return float(np.std(getattr(self, metric))) if self.size else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"image": self.names, "psnr": self.psnr, "ssim": self.ssim, "band_ssim": self.band_ssim})

    def summary(self) -> dict:
        summary = {"count": self.size}
        for metric in ("psnr", "ssim", "band_ssim"):
            summary[f"{metric}_mean"] = self.mean(metric)
            summary[f"{metric}_std"] = self.std(metric)
        return summary
