"""Counter-based random streams.

``Rng`` wraps numpy's Philox generator. Streams are addressed by a seed plus a
path of fork keys, so drawing from one stream (say, the data loader) never
shifts another (say, weight initialisation).
"""

import zlib
from typing import Tuple, Union

import numpy as np

from preview_restore.tensor.tensor import get_default_dtype


class Rng:
    """Seeded Philox stream; identical seed and call sequence give identical draws."""

    def __init__(self, seed: int, stream: Tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError(f"Rng seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def fork(self, key: Union[str, int]) -> "Rng":
        """Independent child stream named by ``key``."""
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        return Rng(self.seed, self.stream + (int(key),))

    def normal(self, shape, dtype=None) -> np.ndarray:
        dtype = np.dtype(dtype or get_default_dtype())
        return self._generator.standard_normal(size=shape, dtype=dtype)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._generator.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        return self._generator.integers(low, high, size=size)

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self._generator.random(size=size) < p

    def choice(self, options, size=None):
        return self._generator.choice(options, size=size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
