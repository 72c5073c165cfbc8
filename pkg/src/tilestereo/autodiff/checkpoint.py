"""Binary checkpoint format.

Layout (little-endian)::

    magic    8 bytes  b"TSCKPT\\x00\\x01"
    version  u32
    count    u32
    count x { name_len u32, name utf-8, extents 4 x u32, data float32[prod(extents)] }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .params import ParameterStore

MAGIC = b"TSCKPT\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _extents(shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    if len(shape) > 4:
        raise CheckpointError(f"parameter rank {len(shape)} exceeds 4")
    return tuple([1] * (4 - len(shape)) + list(shape))


def save_checkpoint(store: ParameterStore, path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, p in store:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<4I", *_extents(p.shape)))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Return name -> float32 array with the stored 4 extents, in file order."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic")
    try:
        version, count = struct.unpack_from("<II", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}")
        pos, out = 16, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            ext = struct.unpack_from("<4I", buf, pos)
            pos += 16
            size = int(np.prod(ext))
            if pos + 4 * size > len(buf):
                raise CheckpointError("truncated payload")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(ext).copy()
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last record")
    return out


def load_checkpoint(store: ParameterStore, path) -> None:
    """Load values into an existing store; names and shapes must match exactly."""
    values = read_checkpoint(path)
    if list(values) != store.names():
        missing = set(store.names()) - set(values)
        extra = set(values) - set(store.names())
        raise CheckpointError(f"parameter names differ (missing={sorted(missing)[:5]}, extra={sorted(extra)[:5]})")
    for name, p in store:
        arr = values[name]
        if arr.shape != _extents(p.shape):
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
        p.data = arr.reshape(p.shape).astype(p.data.dtype)
