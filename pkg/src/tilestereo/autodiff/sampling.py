"""Scan-line interpolation and pooling."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, from_op


def linear_weights(coords: np.ndarray, width: int):
    """Clamped left index and fractional weight for linear sampling along x.

    Returns (i0, frac, inside) where ``inside`` marks coordinates that were
    not clamped (the only ones with a nonzero coordinate gradient).
    """
    u = np.clip(coords, 0, width - 1)
    inside = (coords >= 0) & (coords <= width - 1)
    if width == 1:
        return np.zeros(u.shape, dtype=np.intp), np.zeros_like(u), np.zeros(u.shape, bool)
    # non-finite coordinates index column 0 and keep a NaN weight, so NaN propagates
    i0 = np.minimum(np.floor(np.nan_to_num(u)).astype(np.intp), width - 2)
    return i0, u - i0, inside


def _row_gather(feat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """feat [B, C, H, W], idx [B, 1, H, Wo] -> [B, C, H, Wo] gathered along the last axis."""
    B, C, H, _ = feat.shape
    return np.take_along_axis(feat, np.broadcast_to(idx, (B, C, H, idx.shape[-1])), axis=3)


def scatter_rows(values: np.ndarray, idx: np.ndarray, width: int) -> np.ndarray:
    """Adjoint of :func:`_row_gather`: sum ``values`` [B, C, H, Wo] into columns ``idx``."""
    B, C, H, Wo = values.shape
    base = (np.arange(B * C * H, dtype=np.intp) * width).reshape(B, C, H, 1)
    flat = (base + np.broadcast_to(idx, (B, C, H, Wo))).ravel()
    out = np.bincount(flat, weights=values.ravel(), minlength=B * C * H * width)
    return out.reshape(B, C, H, width).astype(values.dtype, copy=False)


def sample_linear_x(feat, coords) -> Tensor:
    """Linearly interpolate ``feat`` [B, C, H, W] along x at ``coords`` [B, 1, H, Wo].

    Coordinates are clamped to [0, W - 1].  Differentiable in both inputs.
    """
    feat, coords = as_tensor(feat), as_tensor(coords)
    fd = feat.data
    B, C, H, W = fd.shape
    if coords.ndim != 4 or coords.shape[0] != B or coords.shape[1] != 1 or coords.shape[2] != H:
        raise ValueError(f"coords shape {coords.shape} incompatible with features {fd.shape}")
    i0, f, inside = linear_weights(coords.data, W)
    i1 = np.minimum(i0 + 1, W - 1)
    v0 = _row_gather(fd, i0)
    v1 = _row_gather(fd, i1)
    out = v0 + f * (v1 - v0)

    def bw(g):
        gf = gc = None
        if feat.requires_grad:
            gf = scatter_rows(g * (1 - f), i0, W) + scatter_rows(g * f, i1, W)
        if coords.requires_grad:
            gc = ((v1 - v0) * g).sum(axis=1, keepdims=True) * inside
        return gf, gc

    return from_op(out, (feat, coords), bw)


def maxpool2d(x, k: int, s: int | None = None) -> Tensor:
    """Windowed maximum over non-overlapping or strided k x k windows (valid only)."""
    x = as_tensor(x)
    s = s or k
    B, C, H, W = x.shape
    if H < k or W < k:
        raise ValueError("spatial extents smaller than the pooling window")
    Ho, Wo = (H - k) // s + 1, (W - k) // s + 1
    st = x.data.strides
    win = np.lib.stride_tricks.as_strided(
        x.data, (B, C, Ho, Wo, k, k), (st[0], st[1], st[2] * s, st[3] * s, st[2], st[3]), writeable=False
    ).reshape(B, C, Ho, Wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        r = np.arange(Ho)[:, None] * s + arg // k
        c = np.arange(Wo)[None, :] * s + arg % k
        bi = np.arange(B)[:, None, None, None]
        ci = np.arange(C)[None, :, None, None]
        np.add.at(gx, (bi, ci, r, c), g)
        return (gx,)

    return from_op(np.ascontiguousarray(out), (x,), bw)


def masked_maxpool2d(x: np.ndarray, valid: np.ndarray, k: int, s: int | None = None):
    """Max over valid entries of each window; returns (values, window_valid).

    Windows without any valid entry are flagged invalid (value 0).  Operates on
    plain arrays of shape [..., H, W]; used for ground-truth preparation.
    """
    s = s or k
    x = np.asarray(x)
    valid = np.asarray(valid, dtype=bool)
    H, W = x.shape[-2:]
    if H < k or W < k:
        raise ValueError("spatial extents smaller than the pooling window")
    Ho, Wo = (H - k) // s + 1, (W - k) // s + 1
    filled = np.where(valid, x, -np.inf)
    st = filled.strides
    lead = filled.shape[:-2]
    win = np.lib.stride_tricks.as_strided(
        filled, lead + (Ho, Wo, k, k), st[:-2] + (st[-2] * s, st[-1] * s, st[-2], st[-1]), writeable=False
    )
    m = win.max(axis=(-2, -1))
    ok = np.isfinite(m)
    return np.where(ok, m, 0).astype(x.dtype), ok
