"""Flat binary parameter checkpoints.

Layout (all integers little-endian u32)::

    b"MVHC" | version | record*
    record := name_len | name (utf-8) | rows | cols | rows*cols f64 (LE, row-major)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MVHC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _as_matrix(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype="<f8")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise CheckpointError(f"parameter {name!r} must be at most 2-D, got {arr.shape}")
    return np.ascontiguousarray(arr)


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in params.items():
        mat = _as_matrix(name, value)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<II", *mat.shape))
        chunks.append(mat.tobytes())
    return b"".join(chunks)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError("not an MVHC checkpoint (bad magic bytes)")
    if len(data) < 8:
        raise CheckpointError("truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    try:
        while pos < len(data):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            nbytes = 8 * rows * cols
            if pos + nbytes > len(data):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = (
                np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
                .reshape(rows, cols)
                .astype(np.float64)
            )
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError("truncated record header") from exc
    return out


def save(path, params: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params))
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
