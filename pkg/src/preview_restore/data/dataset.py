"""Dataset manifest, on-demand pair regeneration and the threaded batch loader."""

import collections
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from preview_restore.config import DEGRADATION_LEVELS
from preview_restore.errors import ConfigError
from preview_restore.tensor import Rng
from .degrade import DegradeSpec, degrade, sample_level
from .shapes import CLASS_NAMES, IMAGE_SIZE, random_shape_spec, render_shape

SPLITS = ("train", "val", "test")
MANIFEST_COLUMNS = [
    "split", "index", "class_id", "seed", "level",
    "blur_sigma", "down_factor", "noise_sigma", "quant_levels",
    "second_blur_sigma", "second_down_factor", "second_noise_sigma", "second_quant_levels",
]


@dataclass
class ImagePair:
    hq: np.ndarray
    lq: np.ndarray
    spec: DegradeSpec
    class_id: int
    seed: int
    level: str


@dataclass
class Batch:
    """Stacked pairs: images are (N, 1, S, S) float32."""

    hq: np.ndarray
    lq: np.ndarray
    class_ids: np.ndarray
    levels: List[str]
    indices: np.ndarray


def pair_seed(base_seed: int, split: str, index: int) -> int:
    """Per-pair 32-bit seed derived from (base seed, split, index) only."""
    sequence = np.random.SeedSequence([int(base_seed), SPLITS.index(split), int(index)])
    return int(sequence.generate_state(1)[0])


def pair_class(base_seed: int, index: int) -> int:
    """Balanced class assignment: a seed-dependent rotation of ``index mod num_classes``."""
    return int((index + base_seed) % len(CLASS_NAMES))


def make_pair(seed: int, class_id: int, level: str, second_pass_prob: float = 0.5,
              spec: Optional[DegradeSpec] = None) -> ImagePair:
    """Regenerate a pair from its seed; ``spec`` overrides the level draw (manifest replay)."""
    rng = Rng(seed)
    hq = render_shape(random_shape_spec(rng.fork("shape"), class_id), IMAGE_SIZE)
    if spec is None:
        spec = sample_level(level, rng.fork("level"), second_pass_prob)
    lq = degrade(hq, spec, rng.fork("degrade"))
    return ImagePair(hq=hq, lq=lq, spec=spec, class_id=int(class_id), seed=int(seed), level=level)


def build_manifest(config) -> pd.DataFrame:
    """
    Rows for every pair: ``train_size`` and ``val_size`` pairs with a random level each,
    and ``test_size`` pairs per degradation level for the test split.
    """
    data = config.data
    rows = []
    for split, size in (("train", data.train_size), ("val", data.val_size)):
        for index in range(size):
            seed = pair_seed(data.seed, split, index)
            level = DEGRADATION_LEVELS[int(Rng(seed).fork("split_level").integers(0, len(DEGRADATION_LEVELS)))]
            rows.append(_manifest_row(split, index, data.seed, seed, level, data.second_pass_prob))
    for offset, level in enumerate(DEGRADATION_LEVELS):
        for local in range(data.test_size):
            index = offset * data.test_size + local
            seed = pair_seed(data.seed, "test", index)
            rows.append(_manifest_row("test", index, data.seed, seed, level, data.second_pass_prob))
    return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def _manifest_row(split: str, index: int, base_seed: int, seed: int, level: str, p2: float) -> Dict:
    spec = sample_level(level, Rng(seed).fork("level"), p2)
    row = {"split": split, "index": index, "class_id": pair_class(base_seed, index), "seed": seed, "level": level}
    row.update(spec.to_row())
    return row


def pair_from_row(row) -> ImagePair:
    return make_pair(int(row["seed"]), int(row["class_id"]), str(row["level"]), spec=DegradeSpec.from_row(row))


def select_split(manifest: pd.DataFrame, split: str, level: Optional[str] = None) -> pd.DataFrame:
    if split not in SPLITS:
        raise ConfigError(f"Unknown split '{split}'. Allowed: {list(SPLITS)}")
    rows = manifest[manifest["split"] == split]
    if level is not None:
        rows = rows[rows["level"] == level]
    return rows.reset_index(drop=True)


def stack_pairs(pairs: List[ImagePair], indices) -> Batch:
    return Batch(
        hq=np.stack([pair.hq for pair in pairs])[:, None],
        lq=np.stack([pair.lq for pair in pairs])[:, None],
        class_ids=np.array([pair.class_id for pair in pairs], dtype=np.int64),
        levels=[pair.level for pair in pairs],
        indices=np.asarray(indices, dtype=np.int64),
    )


class PairLoader:
    """
    Deterministic batches over manifest rows.

    Batch ``step`` holds rows drawn by a counter stream keyed on (seed, step), so the
    content depends only on those two numbers. ``iterate`` generates upcoming batches
    on a thread pool and yields them in order through a bounded window.
    """

    def __init__(self, rows: pd.DataFrame, batch_size: int, seed: int, workers: int = 2, prefetch: int = 4):
        if rows.empty:
            raise ConfigError("PairLoader: no manifest rows to draw from")
        self.rows = rows.reset_index(drop=True)
        self.batch_size = batch_size
        self.stream = Rng(seed).fork("batches")
        self.workers = max(1, workers)
        self.prefetch = max(1, prefetch)
        self._cache: Dict[int, ImagePair] = {}
        self._lock = threading.Lock()

    def pair(self, position: int) -> ImagePair:
        with self._lock:
            cached = self._cache.get(position)
        if cached is None:
            cached = pair_from_row(self.rows.iloc[position])
            with self._lock:
                self._cache[position] = cached
        return cached

    def batch_positions(self, step: int) -> np.ndarray:
        return self.stream.fork(int(step)).integers(0, len(self.rows), size=self.batch_size)

    def batch(self, step: int) -> Batch:
        positions = self.batch_positions(step)
        return stack_pairs([self.pair(int(p)) for p in positions], positions)

    def ordered(self, start: int = 0, stop: Optional[int] = None) -> Batch:
        """Rows ``start:stop`` in manifest order (evaluation)."""
        stop = len(self.rows) if stop is None else min(stop, len(self.rows))
        positions = np.arange(start, stop)
        return stack_pairs([self.pair(int(p)) for p in positions], positions)

    def iterate(self, start: int, stop: int) -> Iterator[Tuple[int, Batch]]:
        window: collections.deque = collections.deque()
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            next_step = start
            while next_step < stop or window:
                while next_step < stop and len(window) < self.prefetch:
                    window.append((next_step, pool.submit(self.batch, next_step)))
                    next_step += 1
                step, future = window.popleft()
                yield step, future.result()
