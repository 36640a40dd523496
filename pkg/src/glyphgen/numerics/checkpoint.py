"""Binary checkpoint fragments: named float32 arrays.

Layout (all little-endian):
    magic   4 bytes  b"MAUG"
    version u32      = 1
    repeated per array:
        name_len u32
        name     UTF-8 bytes
        rank     u32
        extents  rank * u64
        payload  prod(extents) * f32
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MAUG"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays):
    """Write named arrays in insertion order (order is part of the bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            for ext in a.shape:
                f.write(struct.pack("<Q", ext))
            f.write(a.tobytes())


def load_arrays(path):
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 8
    out = {}
    while off < len(data):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        extents = struct.unpack_from(f"<{rank}Q", data, off) if rank else ()
        off += 8 * rank
        count = int(np.prod(extents)) if extents else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(extents)
        off += 4 * count
        out[name] = np.array(arr)  # own the memory
    return out
