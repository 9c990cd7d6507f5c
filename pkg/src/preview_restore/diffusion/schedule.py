"""Variance-preserving noise schedule, forward process and deterministic DDIM updates.

Time-steps are integers on the training grid ``[0, T]``. Every function accepts a
single step or one step per batch sample (shape ``(N,)``); per-sample coefficients
broadcast over the trailing image axes.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import pandas as pd

from preview_restore.errors import ScheduleError, ShapeError
from preview_restore.tensor import Rng, Tensor, get_default_dtype

Steps = Union[int, np.ndarray]

MIN_ALPHA = 1e-6


class NoiseSchedule:
    """
    Cosine VP schedule: ``alpha_t = cos(t/T * pi/2)``, ``beta_t = sqrt(1 - alpha_t^2)``.

    Tables are float64 and indexed by integer step.
    """

    def __init__(self, steps: int = 256, kind: str = "cosine"):
        if kind != "cosine":
            raise ScheduleError(f"Unsupported schedule kind '{kind}'")
        if steps < 2:
            raise ScheduleError(f"Schedule needs at least 2 steps, got {steps}")
        self.T = int(steps)
        self.kind = kind
        grid = np.arange(self.T + 1, dtype=np.float64)
        self.alpha = np.cos(grid / self.T * math.pi / 2.0)
        self.alpha[0] = 1.0
        self.beta = np.sqrt(np.clip(1.0 - self.alpha ** 2, 0.0, None))

    @classmethod
    def from_config(cls, config) -> "NoiseSchedule":
        return cls(steps=config.schedule.steps, kind=config.schedule.kind)

    @classmethod
    def from_tables(cls, alpha, beta) -> "NoiseSchedule":
        """Schedule with explicit tables (index 0 must be alpha=1, beta=0)."""
        alpha, beta = np.asarray(alpha, dtype=np.float64), np.asarray(beta, dtype=np.float64)
        if alpha.shape != beta.shape or alpha.ndim != 1 or len(alpha) < 2:
            raise ScheduleError("alpha and beta tables must be 1-D, equal length and cover at least t=0..1")
        schedule = cls.__new__(cls)
        schedule.T, schedule.kind = len(alpha) - 1, "tables"
        schedule.alpha, schedule.beta = alpha.copy(), beta.copy()
        return schedule

    def check_steps(self, t: Steps) -> np.ndarray:
        steps = np.asarray(t, dtype=np.int64)
        if steps.size == 0 or steps.min() < 0 or steps.max() > self.T:
            raise ScheduleError(f"Time-step {t} outside [0, {self.T}]")
        return steps

    def coefficient(self, table: np.ndarray, t: Steps, ndim: int):
        """``table[t]`` as a float (scalar step) or an ``(N, 1, ...)`` array broadcasting over images."""
        steps = self.check_steps(t)
        if steps.ndim == 0:
            return float(table[steps])
        return table[steps].reshape((-1,) + (1,) * (ndim - 1)).astype(get_default_dtype())

    def inference_grid(self, steps: int) -> np.ndarray:
        """
        ``steps`` descending, uniformly spaced training steps from ``T - 1`` down to 1.

        The sampler moves from ``grid[k]`` to ``grid[k + 1]`` and from the last entry to 0.
        """
        if not 1 <= steps < self.T:
            raise ScheduleError(f"Inference steps must lie in [1, {self.T}), got {steps}")
        grid = np.round(np.linspace(self.T - 1, 1, steps)).astype(np.int64)
        if len(np.unique(grid)) != steps:
            raise ScheduleError(f"{steps} inference steps do not fit a {self.T}-step schedule")
        return grid

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": np.arange(self.T + 1), "alpha": self.alpha, "beta": self.beta})


@dataclass
class DiffusionSample:
    z_t: Tensor
    t: Steps
    eps: Tensor


def _scale(x: Tensor, coefficient) -> Tensor:
    if isinstance(coefficient, float):
        return x * coefficient
    return x * Tensor(coefficient, dtype=x.dtype)


def add_noise(x: Tensor, t: Steps, rng: Rng, schedule: NoiseSchedule) -> DiffusionSample:
    """Draw ``z_t = alpha_t * x + beta_t * eps`` with ``eps ~ N(0, I)`` from ``rng``."""
    eps = Tensor(rng.normal(x.shape, dtype=x.dtype), dtype=x.dtype)
    return DiffusionSample(z_t=noise_to(x, eps, t, schedule), t=t, eps=eps)


def noise_to(x: Tensor, eps: Tensor, t: Steps, schedule: NoiseSchedule) -> Tensor:
    """Deterministic part of ``add_noise`` for a given ``eps``."""
    alpha = schedule.coefficient(schedule.alpha, t, x.ndim)
    beta = schedule.coefficient(schedule.beta, t, x.ndim)
    return _scale(x, alpha) + _scale(eps, beta)


def diffusion_loss(eps_pred: Tensor, eps: Tensor) -> Tensor:
    """Mean squared error over every element."""
    if eps_pred.shape != eps.shape:
        raise ShapeError(f"diffusion_loss: prediction {eps_pred.shape} vs target {eps.shape}")
    diff = eps_pred - eps
    return (diff * diff).mean()


def x0_from_eps(z_t: Tensor, eps_pred: Tensor, t: Steps, schedule: NoiseSchedule) -> Tensor:
    """Invert the forward marginal: ``(z_t - beta_t * eps_pred) / alpha_t``; identity at ``t = 0``."""
    steps = schedule.check_steps(t)
    if np.all(steps == 0):
        return z_t
    alpha_values = schedule.alpha[steps]
    if np.any(alpha_values < MIN_ALPHA):
        raise ScheduleError(f"x0_from_eps: alpha_t below {MIN_ALPHA} at t={t}")
    alpha = schedule.coefficient(schedule.alpha, t, z_t.ndim)
    beta = schedule.coefficient(schedule.beta, t, z_t.ndim)
    inv_alpha = 1.0 / alpha if isinstance(alpha, float) else (1.0 / alpha).astype(alpha.dtype)
    return _scale(z_t - _scale(eps_pred, beta), inv_alpha)


def ddim_step(z_t: Tensor, x0_hat: Tensor, t: Steps, t_prev: Steps, schedule: NoiseSchedule) -> Tensor:
    """
    Deterministic DDIM move ``t -> t_prev``:
    ``alpha_prev * x0_hat + (beta_prev / beta_t) * (z_t - alpha_t * x0_hat)``.
    """
    steps, prev = schedule.check_steps(t), schedule.check_steps(t_prev)
    if np.any(prev > steps):
        raise ScheduleError(f"ddim_step: t_prev={t_prev} must not exceed t={t}")
    if np.any(schedule.beta[steps] == 0.0):
        raise ScheduleError("ddim_step: beta_t is zero (t = 0 cannot be a source step)")
    if np.all(prev == steps):
        return z_t
    alpha = schedule.coefficient(schedule.alpha, t, z_t.ndim)
    alpha_prev = schedule.coefficient(schedule.alpha, t_prev, z_t.ndim)
    ratio = schedule.beta[prev] / schedule.beta[steps]
    ratio = float(ratio) if np.ndim(ratio) == 0 else ratio.reshape((-1,) + (1,) * (z_t.ndim - 1)).astype(
        get_default_dtype())
    return _scale(x0_hat, alpha_prev) + _scale(z_t - _scale(x0_hat, alpha), ratio)
