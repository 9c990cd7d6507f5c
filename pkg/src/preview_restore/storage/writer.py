"""Functions related to writing checkpoints, tables and images"""

import json
import os
import struct
from typing import Dict, Mapping, Optional

import numpy as np
import pandas as pd

CONTAINER_MAGIC = b"IIRK"
CONTAINER_VERSION = 1
FLOAT_FORMAT = "%.8g"


def ensure_parent_exists(path: str):
    """Create the directory holding ``path`` if it is missing."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_container(path: str, tensors: Mapping[str, np.ndarray]):
    """Write named float arrays to an IIRK container.

    Layout: magic, u32 version, then per record u32 name length, UTF-8 name,
    u32 rank, rank x u64 extents and the little-endian f32 payload.
    """
    ensure_parent_exists(path)
    with open(path, "wb") as handle:
        handle.write(CONTAINER_MAGIC)
        handle.write(struct.pack("<I", CONTAINER_VERSION))
        for name, array in tensors.items():
            array = np.asarray(array)
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<I", array.ndim))
            handle.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            handle.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def write_checkpoint(path: str, tensors: Mapping[str, np.ndarray], meta: Dict):
    """Write the container plus its JSON sidecar (phase, config hash, digests, step)."""
    write_container(path, tensors)
    with open(f"{path}.json", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)


def write_table(frame: pd.DataFrame, path: str):
    """Write a CSV with a fixed float format so reruns are byte-identical."""
    ensure_parent_exists(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_pgm(path: str, image: np.ndarray):
    """Write a 2-D image in [-1, 1] as binary 8-bit PGM (P5)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        image = image.reshape(image.shape[-2:])
    pixels = np.round((np.clip(image, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    ensure_parent_exists(path)
    with open(path, "wb") as handle:
        handle.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        handle.write(pixels.tobytes())


def append_run_log(path: str, line: str, timestamp: Optional[str] = None):
    """Append one reproducibility line to the run log."""
    ensure_parent_exists(path)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(f"{timestamp + ' ' if timestamp else ''}{line}\n")
