"""Versioned binary checkpoint container for named float32 tensors.

Layout: 8-byte magic "F3VACKPT", u32 version, u32 tensor count, then per
tensor: u32 name length, UTF-8 name, u32 rank, u32 dims, row-major
little-endian float32 data.  Tensors are written in sorted name order so
the file is a deterministic function of its contents.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"F3VACKPT"
VERSION = 1


def save_checkpoint(path, tensors: dict) -> None:
    path = Path(path)
    names = sorted(tensors)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise DataError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = 16
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(data):
        raise DataError(f"{path}: trailing bytes")
    return out
