"""Trajectory diagnostics: per-step, per-level means of the sampler's preview statistics."""

import os
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from preview_restore.config import DEGRADATION_LEVELS
from preview_restore.errors import ShapeError
from preview_restore.sampling.sampler import TrajectoryLog
from preview_restore.storage import write_table

PANELS = {
    "a": ("dist_preview_mean", "panel_a_preview_vs_mean.csv"),
    "b": ("dist_temporal", "panel_b_temporal.csv"),
    "c": ("delta", "panel_c_delta.csv"),
}


@dataclass
class TrajectoryStats:
    """One frame per panel: columns ``step``, ``t`` and one mean column per level."""

    panels: Dict[str, pd.DataFrame]
    levels: Sequence[str]
    counts: Dict[str, int]

    def panel(self, key: str) -> pd.DataFrame:
        return self.panels[key]

    def write(self, out_dir: str, suffix: str = "") -> Dict[str, str]:
        """Write the three panel CSVs; returns panel key -> path."""
        paths = {}
        for key, (_, filename) in PANELS.items():
            stem, ext = os.path.splitext(filename)
            path = os.path.join(out_dir, f"{stem}{suffix}{ext}")
            write_table(self.panels[key], path)
            paths[key] = path
        return paths


def trajectory_report(logs_by_level: Mapping[str, Sequence[TrajectoryLog]],
                      out_dir: Optional[str] = None) -> TrajectoryStats:
    """
    Average trajectory logs step by step within each degradation level.

    Raises:
        ShapeError: An empty group, an unknown level, or logs of unequal length.
    """
    if not logs_by_level:
        raise ShapeError("trajectory_report: no log groups")
    levels = [level for level in DEGRADATION_LEVELS if level in logs_by_level]
    unknown = sorted(set(logs_by_level) - set(DEGRADATION_LEVELS))
    if unknown:
        raise ShapeError(f"trajectory_report: unknown levels {unknown}")

    steps = None
    means: Dict[str, Dict[str, np.ndarray]] = {}
    for level in levels:
        logs = list(logs_by_level[level])
        if not logs or any(len(log) == 0 for log in logs):
            raise ShapeError(f"trajectory_report: group '{level}' is empty")
        lengths = {len(log) for log in logs}
        if len(lengths) != 1 or (steps is not None and steps.shape[0] not in lengths):
            raise ShapeError(f"trajectory_report: logs in '{level}' have unequal lengths {sorted(lengths)}")
        steps = logs[0].column("t")
        means[level] = {column: np.mean([log.column(column) for log in logs], axis=0)
                        for column, _ in PANELS.values()}

    panels = {}
    for key, (column, _) in PANELS.items():
        frame = pd.DataFrame({"step": np.arange(len(steps)), "t": steps})
        for level in levels:
            frame[level] = means[level][column]
        panels[key] = frame
    stats = TrajectoryStats(panels=panels, levels=levels,
                            counts={level: len(logs_by_level[level]) for level in levels})
    if out_dir is not None:
        stats.write(out_dir)
    return stats


def delta_ordering_fraction(stats: TrajectoryStats, eta_cutoff: int,
                            order: Sequence[str] = DEGRADATION_LEVELS) -> float:
    """
    Fraction of indicator-evaluating steps (position ``K - k`` above ``eta_cutoff``) where
    the mean indicator is strictly ordered ``order[0] > order[1] > ...``.
    """
    missing = [level for level in order if level not in stats.levels]
    if missing:
        raise ShapeError(f"delta_ordering_fraction: levels {missing} absent from the report")
    frame = stats.panel("c")
    total = len(frame)
    evaluated = frame[total - frame["step"] > eta_cutoff]
    if evaluated.empty:
        return 0.0
    values = evaluated[list(order)].to_numpy()
    ordered = np.all(values[:, :-1] > values[:, 1:], axis=1)
    return float(np.mean(ordered))


def reference_row_report(rows_by_variant: Mapping[str, np.ndarray], lq: np.ndarray, grid: Sequence[int],
                         names: Sequence[str]) -> pd.DataFrame:
    """
    Mean squared distance between each step's clean-image estimate and the LQ input.

    Args:
        rows_by_variant: Variant name -> ``(N, K, 1, S, S)`` estimates from ``reference_row``.
        lq: ``(N, 1, S, S)`` inputs the rows were sampled from.
        grid: The ``K`` inference steps.
        names: One name per image.

    Returns:
        DataFrame with columns ``variant``, ``image``, ``step``, ``t``, ``dist_lq``.

    Raises:
        ShapeError: A row does not match ``lq``, ``grid`` or ``names``.
    """
    lq = np.asarray(lq, dtype=np.float64)
    records = []
    for variant, row in rows_by_variant.items():
        row = np.asarray(row, dtype=np.float64)
        if row.shape[:2] != (len(names), len(grid)) or row.shape[2:] != lq.shape[1:] or len(lq) != len(names):
            raise ShapeError(f"reference_row_report: '{variant}' rows {row.shape} do not match "
                             f"{len(names)} images of {lq.shape[1:]} over {len(grid)} steps")
        distances = np.mean((row - lq[:, None]) ** 2, axis=tuple(range(2, row.ndim)))
        for i, name in enumerate(names):
            for k, t in enumerate(grid):
                records.append({"variant": variant, "image": name, "step": k, "t": int(t),
                                "dist_lq": float(distances[i, k])})
    return pd.DataFrame(records, columns=["variant", "image", "step", "t", "dist_lq"])
