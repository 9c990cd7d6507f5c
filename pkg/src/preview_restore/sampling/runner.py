"""Batch restoration over manifest rows or loose LQ images."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from preview_restore.bundle import RestorationNets
from preview_restore.data import pair_from_row
from preview_restore.diffusion import NoiseSchedule
from preview_restore.quality.metrics import MetricReport
from preview_restore.sampling.sampler import SamplerConfig, TrajectoryLog, adares_sample


@dataclass
class RestoreResult:
    """Restored images with their inputs; ``hq`` is None for loose inputs."""

    names: List[str]
    lq: np.ndarray
    restored: np.ndarray
    class_ids: np.ndarray
    hq: Optional[np.ndarray] = None
    logs: List[TrajectoryLog] = field(default_factory=list)

    def report(self) -> MetricReport:
        return MetricReport.evaluate(list(self.restored), list(self.hq), self.names)

    def baseline(self) -> MetricReport:
        """Scores of the degraded inputs themselves."""
        return MetricReport.evaluate(list(self.lq), list(self.hq), self.names)


def restore_images(lq: np.ndarray, class_ids, nets: RestorationNets, schedule: NoiseSchedule,
                   config: SamplerConfig, indices: Sequence[int], batch_size: int,
                   names: Sequence[str] = (), hq: Optional[np.ndarray] = None) -> RestoreResult:
    """
    Run the sampler chunk by chunk. Initial noise is keyed by ``indices``, so chunking
    does not change any output.
    """
    lq = np.asarray(lq, dtype=np.float32).reshape(len(indices), 1, lq.shape[-2], lq.shape[-1])
    class_ids = np.broadcast_to(np.asarray(class_ids, dtype=np.int64), (len(indices),))
    indices = np.asarray(indices, dtype=np.int64)
    restored, logs = [], []
    for start in range(0, len(indices), max(1, batch_size)):
        part = slice(start, start + max(1, batch_size))
        images, part_logs = adares_sample(lq[part], class_ids[part], nets, schedule, config, indices[part])
        restored.append(images)
        logs.extend(part_logs)
    names = list(names) or [f"{index:05d}" for index in indices]
    return RestoreResult(names=names, lq=lq, restored=np.concatenate(restored), class_ids=class_ids.copy(),
                         hq=hq, logs=logs)


def restore_rows(rows: pd.DataFrame, nets: RestorationNets, schedule: NoiseSchedule, config: SamplerConfig,
                 batch_size: int) -> RestoreResult:
    """Regenerate the manifest pairs in ``rows`` and restore their LQ images."""
    pairs = [pair_from_row(row) for _, row in rows.iterrows()]
    indices = rows["index"].to_numpy(dtype=np.int64)
    return restore_images(
        np.stack([pair.lq for pair in pairs]), [pair.class_id for pair in pairs], nets, schedule, config,
        indices, batch_size, names=[f"{row['level']}_{int(row['index']):05d}" for _, row in rows.iterrows()],
        hq=np.stack([pair.hq for pair in pairs])[:, None],
    )
