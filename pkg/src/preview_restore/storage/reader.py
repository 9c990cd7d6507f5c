"""Functions related to reading checkpoints, tables and images"""

import json
import os
import struct
from collections import OrderedDict
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from preview_restore.errors import CheckpointError
from .writer import CONTAINER_MAGIC, CONTAINER_VERSION


def _read_exact(handle, count: int, path: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise CheckpointError(f"Truncated container '{path}'")
    return data


def read_container(path: str) -> "OrderedDict[str, np.ndarray]":
    """Read every record of an IIRK container, in file order."""
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint '{path}' does not exist")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    with open(path, "rb") as handle:
        if handle.read(4) != CONTAINER_MAGIC:
            raise CheckpointError(f"'{path}' is not an IIRK container")
        (version,) = struct.unpack("<I", _read_exact(handle, 4, path))
        if version != CONTAINER_VERSION:
            raise CheckpointError(f"'{path}' has format version {version}, expected {CONTAINER_VERSION}")
        while True:
            head = handle.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError(f"Truncated container '{path}'")
            (name_length,) = struct.unpack("<I", head)
            name = _read_exact(handle, name_length, path).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(handle, 4, path))
            shape = struct.unpack(f"<{rank}Q", _read_exact(handle, 8 * rank, path))
            count = int(np.prod(shape)) if rank else 1
            payload = _read_exact(handle, 4 * count, path)
            tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    return tensors


def read_checkpoint_meta(path: str) -> Dict:
    sidecar = f"{path}.json"
    if not os.path.exists(sidecar):
        raise CheckpointError(f"Checkpoint metadata '{sidecar}' does not exist")
    with open(sidecar, "r", encoding="utf-8") as handle:
        return json.load(handle)


def read_checkpoint(path: str) -> Tuple["OrderedDict[str, np.ndarray]", Dict]:
    """Container records plus the sidecar metadata."""
    return read_container(path), read_checkpoint_meta(path)


def read_table(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


def read_pgm(path: str) -> np.ndarray:
    """Read a binary 8-bit PGM back into [-1, 1]."""
    with open(path, "rb") as handle:
        data = handle.read()
    fields, offset = [], 0
    while len(fields) < 4:
        while data[offset:offset + 1].isspace():
            offset += 1
        if data[offset:offset + 1] == b"#":
            offset = data.index(b"\n", offset) + 1
            continue
        end = offset
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[offset:end])
        offset = end
    if fields[0] != b"P5":
        raise CheckpointError(f"'{path}' is not a binary PGM")
    width, height = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data[offset + 1:offset + 1 + width * height], dtype=np.uint8)
    return pixels.reshape(height, width).astype(np.float32) / 127.5 - 1.0
