"""8-bit binary PGM (P5) and PPM (P6) images."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pfm import FormatError


def _tokens(buf: bytes, n: int):
    """Return the first ``n`` header tokens and the payload offset (comments skipped)."""
    toks, pos = [], 0
    while len(toks) < n:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        toks.append(buf[start:pos])
    return toks, pos + 1  # exactly one whitespace byte before the raster


def read_image(path) -> np.ndarray:
    """Read P5/P6; returns float32 [H, W] (gray) or [H, W, 3] (RGB) scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("malformed netpbm header") from exc
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    ch = 1 if magic == b"P5" else 3
    raw = buf[pos:]
    if len(raw) != w * h * ch:
        raise FormatError(f"payload has {len(raw)} bytes, expected {w * h * ch}")
    img = np.frombuffer(raw, dtype=np.uint8).reshape((h, w) if ch == 1 else (h, w, 3))
    return img.astype(np.float32) / 255.0


def quantize(img) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img) -> None:
    """Write a [0, 1] image as P5 ([H, W]) or P6 ([H, W, 3])."""
    q = quantize(img)
    if q.ndim == 2:
        magic = b"P5"
    elif q.ndim == 3 and q.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot write image of shape {q.shape}")
    h, w = q.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + q.tobytes())
