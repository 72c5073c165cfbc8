"""Portable float map (PFM) disparity files."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def _read_header_line(f) -> bytes:
    line = f.readline()
    if not line:
        raise FormatError("unexpected end of header")
    return line.strip()


def read_pfm(path) -> tuple[np.ndarray, float]:
    """Read a PFM file; returns (values [H, W] or [H, W, 3] top row first, |scale|)."""
    with open(path, "rb") as f:
        magic = _read_header_line(f)
        if magic == b"Pf":
            channels = 1
        elif magic == b"PF":
            channels = 3
        else:
            raise FormatError(f"bad PFM magic {magic!r}")
        try:
            width, height = (int(v) for v in _read_header_line(f).split())
            scale = float(_read_header_line(f))
        except ValueError as exc:
            raise FormatError("malformed PFM header") from exc
        if width <= 0 or height <= 0 or scale == 0:
            raise FormatError("malformed PFM header")
        payload = f.read()
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(payload) != 4 * count:
        raise FormatError(f"payload has {len(payload)} bytes, expected {4 * count}")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    data = np.flipud(data).astype(np.float32)
    if channels == 1:
        data = data[:, :, 0]
    return np.ascontiguousarray(data), abs(scale)


def write_pfm(path, values, scale: float = 1.0, little_endian: bool = True) -> None:
    """Write a single-channel float32 map, rows stored bottom to top."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise FormatError("write_pfm expects a 2-D array")
    if scale <= 0:
        raise FormatError("scale must be positive; endianness is given separately")
    h, w = arr.shape
    dtype = "<f4" if little_endian else ">f4"
    header = f"Pf\n{w} {h}\n{-scale if little_endian else scale}\n".encode("ascii")
    body = np.flipud(arr).astype(dtype).tobytes()
    Path(path).write_bytes(header + body)
