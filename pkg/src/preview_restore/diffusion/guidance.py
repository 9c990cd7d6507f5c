"""Classifier-free guidance combination and inference-grid navigation."""

import numpy as np

from preview_restore.errors import ScheduleError
from preview_restore.tensor import Tensor


def cfg_combine(eps_uncond: Tensor, eps_cond: Tensor, scale: float) -> Tensor:
    """``eps_u + s * (eps_c - eps_u)``; ``s = 1`` returns ``eps_c`` and ``s = 0`` returns ``eps_u`` exactly."""
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + (eps_cond - eps_uncond) * float(scale)


def grid_successor(grid: np.ndarray, s) -> np.ndarray:
    """
    The next (smaller) inference-grid step after each entry of ``s``.

    Raises:
        ScheduleError: ``s`` is off the grid or already its last entry.
    """
    grid = np.asarray(grid, dtype=np.int64)
    steps = np.asarray(s, dtype=np.int64)
    positions = {int(value): index for index, value in enumerate(grid)}
    successors = []
    for value in steps.reshape(-1):
        index = positions.get(int(value))
        if index is None:
            raise ScheduleError(f"Step {int(value)} is not on the inference grid")
        if index == len(grid) - 1:
            raise ScheduleError(f"Step {int(value)} is the bottom of the inference grid")
        successors.append(grid[index + 1])
    return np.asarray(successors, dtype=np.int64).reshape(steps.shape)
