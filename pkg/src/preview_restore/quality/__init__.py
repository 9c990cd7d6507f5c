# File: preview_restore/quality/__init__.py

from .metrics import MetricReport, band_ssim, gaussian_window, laplacian_band, psnr, ssim
from .diagnostics import PANELS, TrajectoryStats, delta_ordering_fraction, reference_row_report, trajectory_report
