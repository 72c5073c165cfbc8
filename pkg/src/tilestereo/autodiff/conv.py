"""2-D convolution and transposed convolution via im2col."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, as_tensor, from_op


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _padding(p) -> tuple[int, int, int, int]:
    """Normalise to (top, bottom, left, right)."""
    if isinstance(p, (tuple, list)):
        if len(p) == 4:
            return tuple(int(v) for v in p)
        if len(p) == 2:
            return int(p[0]), int(p[0]), int(p[1]), int(p[1])
    p = int(p)
    return p, p, p, p


def conv_output_size(n: int, k: int, stride: int, dilation: int, pad_lo: int, pad_hi: int) -> int:
    return (n + pad_lo + pad_hi - dilation * (k - 1) - 1) // stride + 1


def _cols(xp: np.ndarray, kh, kw, sh, sw, dh, dw, Ho, Wo) -> np.ndarray:
    """Gather patches of padded input into a (B*Ho*Wo, C*kh*kw) matrix."""
    B, C = xp.shape[:2]
    s = xp.strides
    view = as_strided(
        xp,
        shape=(B, Ho, Wo, C, kh, kw),
        strides=(s[0], s[2] * sh, s[3] * sw, s[1], s[2] * dh, s[3] * dw),
        writeable=False,
    )
    return view.reshape(B * Ho * Wo, C * kh * kw)


def _scatter_cols(gcols: np.ndarray, padded_shape, kh, kw, sh, sw, dh, dw, Ho, Wo) -> np.ndarray:
    """Adjoint of :func:`_cols`: accumulate patch gradients into the padded input."""
    B, C = padded_shape[:2]
    g = gcols.reshape(B, Ho, Wo, C, kh, kw)
    out = np.zeros(padded_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            out[:, :, r0 : r0 + sh * (Ho - 1) + 1 : sh, c0 : c0 + sw * (Wo - 1) + 1 : sw] += g[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return out


def conv2d(x, w, b=None, stride=1, dilation=1, padding=0) -> Tensor:
    """Cross-correlation of x [B, inC, H, W] with w [outC, inC, kh, kw].

    ``padding`` is an int, (ph, pw) or explicit (top, bottom, left, right);
    padding is with zeros.  ``b`` has shape [outC] or [1, outC, 1, 1].
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    if min(sh, sw, dh, dw) <= 0:
        raise ValueError("stride and dilation must be positive")
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"channel mismatch: input has {C}, weight expects {Cw}")
    pt, pb, pl, pr = _padding(padding)
    Ho = conv_output_size(H, kh, sh, dh, pt, pb)
    Wo = conv_output_size(W, kw, sw, dw, pl, pr)
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"input {H}x{W} too small for kernel {kh}x{kw}")

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else xd
    cols = _cols(xp, kh, kw, sh, sw, dh, dw, Ho, Wo)
    wmat = w.data.reshape(O, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data.reshape(1, O)
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    padded_shape = xp.shape

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gx = gw = gb = None
        if x.requires_grad:
            gp = _scatter_cols(gmat @ wmat, padded_shape, kh, kw, sh, sw, dh, dw, Ho, Wo)
            gx = gp[:, :, pt : pt + H, pl : pl + W]
            if gp.shape != xd.shape:
                gx = np.ascontiguousarray(gx)
        if w.requires_grad:
            gw = (gmat.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gmat.sum(axis=0).reshape(b.shape)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return from_op(np.ascontiguousarray(out), parents, bw)


def transposed_conv2d(x, w, b=None, stride=2) -> Tensor:
    """Transposed convolution, x [B, inC, H, W], w [inC, outC, kh, kw].

    Output extent is (H - 1) * stride + kh.  The forward map equals the
    input-gradient of ``conv2d`` with the same weight array.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    sh, sw = _pair(stride)
    if min(sh, sw) <= 0:
        raise ValueError("stride must be positive")
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("transposed_conv2d expects 4-D input and weight")
    B, C, H, W = x.shape
    Cw, O, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"channel mismatch: input has {C}, weight expects {Cw}")
    Ho, Wo = (H - 1) * sh + kh, (W - 1) * sw + kw

    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, C)
    wmat = w.data.reshape(C, -1)
    # (B*H*W, O*kh*kw) -> reorder to the (C, kh, kw) layout _scatter_cols expects
    cols = (xmat @ wmat).reshape(-1, O, kh, kw)
    out = _scatter_cols(cols.reshape(B * H * W, -1), (B, O, Ho, Wo), kh, kw, sh, sw, 1, 1, H, W)
    if b is not None:
        out += b.data.reshape(1, O, 1, 1)

    def bw(g):
        gcols = _cols(g, kh, kw, sh, sw, 1, 1, H, W)  # (B*H*W, O*kh*kw)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(B, H, W, C).transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx)
        if w.requires_grad:
            gw = (xmat.T @ gcols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).reshape(b.shape)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return from_op(out, parents, bw)
