"""Adaptive-restoration sampling: guided DDIM with previews, aggregator residuals and the
quality indicator that gates them."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from preview_restore.aggregator import noisy_preview_variant
from preview_restore.bundle import RestorationNets
from preview_restore.config import SAMPLER_MODES
from preview_restore.diffusion import NoiseSchedule, cfg_combine, ddim_step, x0_from_eps
from preview_restore.errors import NonFiniteError, SamplingError, ShapeError
from preview_restore.logging import logger
from preview_restore.nets import adapter_scope
from preview_restore.previewer import preview
from preview_restore.tensor import Rng, Tensor, clamp, no_grad, zeros

DEGENERATE_DENOMINATOR = 1e-12
PREVIEW_MODES = ("adares", "fixed", "noisy_preview", "mean_reference")


@dataclass
class SamplerConfig:
    """
    Sampler settings.

    ``eta_cutoff`` counts steps from the end: with ``K`` steps, grid index ``k`` sits at
    position ``K - k`` and the indicator is evaluated only while that position exceeds
    ``eta_cutoff``. ``creative_cutoff`` (``tau``) zeroes the residuals for grid indices
    above it.
    """

    steps: int = 30
    cfg_scale: float = 7.0
    eta_cutoff: int = 4
    mode: str = "adares"
    delta_max: float = 5.0
    seed: int = 0
    creative_class: Optional[int] = None
    creative_cutoff: Optional[int] = None
    cfg_drop_residuals: bool = False
    snapshots: bool = False

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise SamplingError(f"Unknown sampler mode '{self.mode}'. Allowed: {list(SAMPLER_MODES)}")
        if self.steps < 1:
            raise SamplingError(f"steps must be positive, got {self.steps}")
        if not 0 <= self.eta_cutoff < self.steps:
            raise SamplingError(f"eta_cutoff must satisfy 0 <= eta < {self.steps}, got {self.eta_cutoff}")
        if self.creative_cutoff is not None and not 0 <= self.creative_cutoff <= self.steps:
            raise SamplingError(f"creative_cutoff must lie in [0, {self.steps}], got {self.creative_cutoff}")
        if self.delta_max <= 0:
            raise SamplingError("delta_max must be positive")

    @classmethod
    def from_run_config(cls, config) -> "SamplerConfig":
        sampler = config.sampler
        return cls(
            steps=sampler.steps,
            cfg_scale=sampler.cfg_scale,
            eta_cutoff=sampler.eta_cutoff,
            mode=sampler.mode,
            delta_max=sampler.delta_max,
            seed=sampler.seed,
            creative_class=sampler.creative_class if sampler.creative_class >= 0 else None,
            creative_cutoff=sampler.creative_cutoff if sampler.creative_cutoff >= 0 else None,
            cfg_drop_residuals=sampler.cfg_drop_residuals,
            snapshots=sampler.snapshots,
        )


@dataclass
class TrajectoryRecord:
    step: int
    t: int
    dist_preview_mean: float
    dist_temporal: float
    delta: float
    preview: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None


@dataclass
class TrajectoryLog:
    """Per-step preview/mean distances and indicator values of one sampled image."""

    records: List[TrajectoryRecord] = field(default_factory=list)

    COLUMNS = ("step", "t", "dist_preview_mean", "dist_temporal", "delta")

    def append(self, record: TrajectoryRecord):
        if record.dist_preview_mean < 0 or record.dist_temporal < 0:
            raise SamplingError(f"Negative trajectory distance at step {record.step}", step=record.step)
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(record, name) for record in self.records])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: self.column(name) for name in self.COLUMNS})


def squared_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-sample squared L2 distance over all non-batch axes, in float64."""
    gap = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.sum(gap.reshape(gap.shape[0], -1) ** 2, axis=1)


def delta_indicator(psi_hat: np.ndarray, z_hat: np.ndarray, psi_prev: np.ndarray, delta_max: float = 5.0):
    """
    Quality indicator ``||psi_hat - z_hat||^2 / ||psi_hat - psi_prev||^2`` per sample,
    clamped to ``[0, delta_max]``; a denominator below 1e-12 gives ``delta_max``.
    """
    psi_hat, z_hat, psi_prev = (np.asarray(a) for a in (psi_hat, z_hat, psi_prev))
    if psi_hat.shape != z_hat.shape or psi_hat.shape != psi_prev.shape:
        raise ShapeError(f"delta_indicator: shapes {psi_hat.shape}, {z_hat.shape}, {psi_prev.shape} differ")
    batched = psi_hat.ndim > 1
    if not batched:
        psi_hat, z_hat, psi_prev = psi_hat[None], z_hat[None], psi_prev[None]
    numerator = squared_distance(psi_hat, z_hat)
    denominator = squared_distance(psi_hat, psi_prev)
    degenerate = denominator < DEGENERATE_DENOMINATOR
    ratio = numerator / np.where(degenerate, 1.0, denominator)
    delta = np.where(degenerate, delta_max, np.clip(ratio, 0.0, delta_max))
    return delta if batched else float(delta[0])


def cfg_eps(nets: RestorationNets, z_t: Tensor, t, class_id, c_lq: Tensor, scale: float,
            residuals: Optional[Sequence[Tensor]] = None, delta=1.0, drop_residuals: bool = False) -> Tensor:
    """
    Guided epsilon ``eps_u + s * (eps_c - eps_u)``.

    The unconditional branch uses the null class and a zeroed ``c_lq``; it keeps the
    aggregator residuals unless ``drop_residuals`` is set. ``s = 1`` skips it.
    """
    eps_cond = nets.denoiser(z_t, t, class_id, c_lq, residuals, delta)
    if scale == 1.0:
        return eps_cond
    eps_uncond = nets.denoiser(z_t, t, nets.null_class, zeros(c_lq.shape, dtype=c_lq.dtype),
                               None if drop_residuals else residuals, delta)
    return cfg_combine(eps_uncond, eps_cond, scale)


def initial_noise(seed: int, indices: Sequence[int], shape: Tuple[int, ...], schedule: NoiseSchedule,
                  start: int, dtype) -> Tensor:
    """``z_T ~ N(0, beta_T^2 I)`` with one counter stream per image index."""
    stream = Rng(seed).fork("initial_noise")
    draws = [stream.fork(int(index)).normal(shape, dtype=dtype) for index in indices]
    return Tensor(np.stack(draws) * schedule.beta[start], dtype=dtype)


def _as_images(lq) -> Tensor:
    lq = lq if isinstance(lq, Tensor) else Tensor(lq)
    if lq.ndim == 2:
        lq = lq.reshape(1, 1, *lq.shape)
    elif lq.ndim == 3:
        lq = lq.reshape(lq.shape[0], 1, *lq.shape[1:])
    return lq


def _class_ids(class_id, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(class_id, dtype=np.int64), (n,)).copy()


def _check_nets(nets: RestorationNets, lq: Tensor, mode: str):
    if lq.shape[1:] != (1, nets.image_size, nets.image_size):
        raise SamplingError(f"LQ images {lq.shape} do not match the model resolution {nets.image_size}")
    if mode in PREVIEW_MODES and nets.aggregator is None:
        raise SamplingError(f"Sampler mode '{mode}' needs a trained aggregator; none is loaded")
    if mode in ("adares", "fixed", "noisy_preview") and not nets.has_previewer:
        raise SamplingError(f"Sampler mode '{mode}' needs the previewer adapters; none are loaded")


def _ddim_run(lq, class_id, nets: RestorationNets, schedule: NoiseSchedule, config: SamplerConfig,
              indices: Optional[Sequence[int]], keep_estimates: bool) -> Tuple[Tensor, List[np.ndarray]]:
    lq = _as_images(lq)
    n = lq.shape[0]
    classes = _class_ids(class_id, n)
    indices = np.arange(n) if indices is None else indices
    grid = schedule.inference_grid(config.steps)
    estimates = []
    with no_grad(), adapter_scope(nets.denoiser, False):
        z = initial_noise(config.seed, indices, lq.shape[1:], schedule, grid[0], lq.dtype)
        z_hat = z
        for k, t in enumerate(grid):
            t_prev = grid[k + 1] if k + 1 < len(grid) else 0
            try:
                c_lq = nets.context(lq, t)
                eps = cfg_eps(nets, z, t, classes, c_lq, config.cfg_scale)
                z_hat = x0_from_eps(z, eps, t, schedule)
                z = ddim_step(z, z_hat, t, t_prev, schedule)
            except NonFiniteError as e:
                raise SamplingError(f"Non-finite values at step {k}: {e}", step=k) from e
            if keep_estimates:
                estimates.append(np.clip(z_hat.data, -1.0, 1.0))
    return z_hat, estimates


def ddim_sample(lq, class_id, nets: RestorationNets, schedule: NoiseSchedule, config: SamplerConfig,
                indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Plain guided DDIM conditioned on the compact LQ context, without previews or residuals."""
    z_hat, _ = _ddim_run(lq, class_id, nets, schedule, config, indices, keep_estimates=False)
    return np.clip(z_hat.data, -1.0, 1.0)


def reference_row(lq, class_id, nets: RestorationNets, schedule: NoiseSchedule, config: SamplerConfig,
                  indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    One-step clean-image estimates of plain guided DDIM at every grid step, shape
    ``(N, K, 1, S, S)`` clamped to [-1, 1]. Works from a Stage I checkpoint alone, so
    compact encoders trained with and without class conditions can be compared.
    """
    _, estimates = _ddim_run(lq, class_id, nets, schedule, config, indices, keep_estimates=True)
    return np.stack(estimates, axis=1)


def adares_sample(lq, class_id, nets: RestorationNets, schedule: NoiseSchedule, config: SamplerConfig,
                  indices: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, List[TrajectoryLog]]:
    """
    Restore a batch of LQ images.

    Each step previews the current latent, turns the preview and the LQ input into
    decoder residuals, takes a guided epsilon with the residuals gated by the previous
    step's indicator, and moves along the deterministic DDIM grid. The indicator starts
    at 1, is recomputed while the step position exceeds ``eta_cutoff`` and is 0 after.

    Args:
        lq: (N, 1, S, S), (N, S, S) or (S, S) images in [-1, 1].
        class_id: One class for all images or one per image (``creative_class`` overrides).
        indices: Per-image noise stream ids; defaults to ``0..N-1``.

    Returns:
        (restored images clamped to [-1, 1], one ``TrajectoryLog`` per image).

    Raises:
        SamplingError: Missing networks, or non-finite values (with the failing grid index).
    """
    mode = config.mode
    if mode == "no_reference":
        restored = ddim_sample(lq, class_id, nets, schedule, config, indices)
        return restored, [TrajectoryLog() for _ in range(len(restored))]

    lq = _as_images(lq)
    _check_nets(nets, lq, mode)
    n = lq.shape[0]
    classes = _class_ids(config.creative_class if config.creative_class is not None else class_id, n)
    indices = np.arange(n) if indices is None else indices
    grid = schedule.inference_grid(config.steps)
    steps = len(grid)
    noise_stream = Rng(config.seed).fork("noisy_preview")
    logs = [TrajectoryLog() for _ in range(n)]

    with no_grad(), adapter_scope(nets.denoiser, False):
        z = initial_noise(config.seed, indices, lq.shape[1:], schedule, grid[0], lq.dtype)
        delta = np.ones(n)
        psi_prev = np.zeros(lq.shape, dtype=lq.dtype)
        z_hat = z
        for k, t in enumerate(grid):
            t_prev = grid[k + 1] if k + 1 < steps else 0
            try:
                c_lq = nets.context(lq, t)
                if mode == "mean_reference":
                    psi_hat = clamp(x0_from_eps(z, cfg_eps(nets, z, t, classes, c_lq, config.cfg_scale), t, schedule),
                                    -1.0, 1.0)
                else:
                    with adapter_scope(nets.denoiser, True):
                        psi_hat = preview(nets, z, t, c_lq, schedule)
                reference = psi_hat
                if mode == "noisy_preview":
                    reference = noisy_preview_variant(psi_hat, t, schedule, noise_stream.fork(k))

                aggregator_off = config.creative_cutoff is not None and k > config.creative_cutoff
                residuals = None
                if not aggregator_off and np.any(delta != 0.0):
                    residuals = nets.aggregator(reference, lq, t)

                eps = cfg_eps(nets, z, t, classes, c_lq, config.cfg_scale, residuals, delta,
                              config.cfg_drop_residuals)
                z_hat = x0_from_eps(z, eps, t, schedule)
            except NonFiniteError as e:
                raise SamplingError(f"Non-finite values at step {k}: {e}", step=k) from e

            position = steps - k
            if position > config.eta_cutoff:
                if mode == "fixed":
                    next_delta = np.ones(n)
                else:
                    indicator = delta_indicator(psi_hat.data, z_hat.data, psi_prev, config.delta_max)
                    next_delta = np.broadcast_to(np.asarray(indicator, dtype=np.float64), (n,)).copy()
            else:
                next_delta = np.zeros(n)

            dist_mean = squared_distance(psi_hat.data, z_hat.data)
            dist_temporal = squared_distance(psi_hat.data, psi_prev)
            for i, log in enumerate(logs):
                log.append(TrajectoryRecord(
                    step=k, t=int(t), dist_preview_mean=float(dist_mean[i]), dist_temporal=float(dist_temporal[i]),
                    delta=float(next_delta[i]),
                    preview=psi_hat.data[i].copy() if config.snapshots else None,
                    mean=z_hat.data[i].copy() if config.snapshots else None,
                ))

            delta = next_delta
            psi_prev = psi_hat.data
            try:
                z = ddim_step(z, z_hat, t, t_prev, schedule)
            except NonFiniteError as e:
                raise SamplingError(f"Non-finite values at step {k}: {e}", step=k) from e

    logger.log_debug(f"Sampled {n} image(s) in mode '{mode}' over {steps} steps")
    return np.clip(z_hat.data, -1.0, 1.0), logs


def creative_sample(lq, target_class: int, cutoff: int, nets: RestorationNets, schedule: NoiseSchedule,
                    config: SamplerConfig, indices: Optional[Sequence[int]] = None):
    """``adares_sample`` under ``target_class`` with residuals off for grid indices above ``cutoff``."""
    creative = SamplerConfig(**{**config.__dict__, "creative_class": int(target_class), "creative_cutoff": int(cutoff)})
    return adares_sample(lq, target_class, nets, schedule, creative, indices)
