"""One-step previews from the adapted denoiser and their consistency distillation."""

from dataclasses import dataclass

import numpy as np

from preview_restore.bundle import RestorationNets
from preview_restore.diffusion import (
    NoiseSchedule,
    cfg_combine,
    ddim_step,
    grid_successor,
    x0_from_eps,
)
from preview_restore.errors import AdapterError, ScheduleError, ShapeError
from preview_restore.nets import adapter_scope, adapters_enabled
from preview_restore.tensor import Rng, Tensor, clamp, no_grad, zeros


@dataclass
class DistillBatch:
    """
    One consistency-distillation batch: ``z_t`` is the teacher's DDIM step from ``z_s``.

    ``lq`` is kept instead of a single context because the compact encoder is
    time-conditioned; each branch encodes it at its own step.
    """

    z_s: Tensor
    s: np.ndarray
    z_t: Tensor
    t: np.ndarray
    lq: Tensor

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        if np.any(self.t >= self.s):
            raise ScheduleError(f"DistillBatch: every t must be below s (s={self.s.tolist()}, t={self.t.tolist()})")
        if self.z_s.shape != self.z_t.shape:
            raise ShapeError(f"DistillBatch: z_s {self.z_s.shape} vs z_t {self.z_t.shape}")


def preview(nets: RestorationNets, z_t: Tensor, t, c_lq: Tensor, schedule: NoiseSchedule) -> Tensor:
    """
    One-step clean-image estimate from the adapted denoiser under the null class, clamped to [-1, 1].

    Raises:
        AdapterError: The previewer adapters are missing or disabled.
    """
    if not adapters_enabled(nets.denoiser):
        raise AdapterError("preview: previewer adapter is disabled (would preview with the base model)")
    eps = nets.denoiser(z_t, t, nets.null_class, c_lq)
    return clamp(x0_from_eps(z_t, eps, t, schedule), -1.0, 1.0)


def run_preview(nets: RestorationNets, z_t: Tensor, t, c_lq: Tensor, schedule: NoiseSchedule) -> Tensor:
    """``preview`` with the adapters switched on for the call."""
    with adapter_scope(nets.denoiser, True):
        return preview(nets, z_t, t, c_lq, schedule)


def teacher_eps(nets: RestorationNets, z: Tensor, t, c_lq: Tensor, class_id, cfg_scale: float = 1.0) -> Tensor:
    """Base-model epsilon (adapters off) under class and LQ conditioning, optionally guided."""
    with adapter_scope(nets.denoiser, False):
        eps_cond = nets.denoiser(z, t, class_id, c_lq)
        if cfg_scale == 1.0:
            return eps_cond
        eps_uncond = nets.denoiser(z, t, nets.null_class, zeros(c_lq.shape, dtype=c_lq.dtype))
        return cfg_combine(eps_uncond, eps_cond, cfg_scale)


def teacher_step(nets: RestorationNets, z_s: Tensor, s, c_lq: Tensor, class_id, schedule: NoiseSchedule,
                 grid: np.ndarray, cfg_scale: float = 1.0):
    """
    Advance ``z_s`` one inference-grid step with the frozen base model.

    Returns:
        (z_t, t) with ``t`` the grid successor of ``s``.
    """
    t = grid_successor(grid, s)
    with no_grad():
        eps = teacher_eps(nets, z_s, s, c_lq, class_id, cfg_scale)
        x0_hat = x0_from_eps(z_s, eps, s, schedule)
        z_t = ddim_step(z_s, x0_hat, s, t, schedule)
    return z_t, t


def distill_step(nets: RestorationNets, batch: DistillBatch, schedule: NoiseSchedule) -> Tensor:
    """
    Consistency loss ``mean((preview(z_s, s) - StopGrad(preview(z_t, t)))^2)``.

    Only the ``(z_s, s)`` branch carries gradients.
    """
    with no_grad():
        c_s = nets.context(batch.lq, batch.s)
        c_t = nets.context(batch.lq, batch.t)
    with adapter_scope(nets.denoiser, True):
        with no_grad():
            target = preview(nets, batch.z_t, batch.t, c_t, schedule).detach()
        online = preview(nets, batch.z_s, batch.s, c_s, schedule)
    diff = online - target
    return (diff * diff).mean()


def self_consistency(nets: RestorationNets, lq: Tensor, class_ids, schedule: NoiseSchedule, grid: np.ndarray,
                     rng: Rng, cfg_scale: float = 1.0) -> float:
    """
    Mean squared L2 distance between consecutive previews along teacher trajectories.

    Trajectories start from ``beta_{grid[0]} * eps`` with ``eps`` drawn from ``rng``.
    """
    distances = []
    with no_grad():
        z = Tensor(rng.normal(lq.shape, dtype=lq.dtype) * schedule.beta[grid[0]], dtype=lq.dtype)
        previous = None
        for index, s in enumerate(grid):
            current = run_preview(nets, z, s, nets.context(lq, s), schedule)
            if previous is not None:
                gap = (current.data - previous.data).astype(np.float64)
                distances.append(np.sum(gap.reshape(len(gap), -1) ** 2, axis=1))
            previous = current
            if index < len(grid) - 1:
                z, _ = teacher_step(nets, z, s, nets.context(lq, s), class_ids, schedule, grid, cfg_scale)
    return float(np.mean(distances)) if distances else 0.0
