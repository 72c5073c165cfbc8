"""Elementwise, reduction and shape ops."""

from __future__ import annotations

import builtins

import numpy as np

from .tensor import Tensor, as_tensor, from_op, get_dtype


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return from_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return from_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return from_op(ad * bd, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return from_op(-a.data, (a,), lambda g: (-g,))


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    return from_op(a.data * s, (a,), lambda g: (g * s,))


def abs(a) -> Tensor:
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return from_op(np.abs(a.data), (a,), lambda g: (g * sgn,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    """``x`` where x >= 0, ``slope * x`` elsewhere; the kink takes the positive branch."""
    x = as_tensor(x)
    pos = x.data >= 0
    fac = np.where(pos, 1.0, slope).astype(x.data.dtype)
    return from_op(x.data * fac, (x,), lambda g: (g * fac,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return from_op(np.where(pos, x.data, 0), (x,), lambda g: (g * pos,))


def clamp_min(x, lo: float) -> Tensor:
    """max(x, lo); gradient 1 where x > lo."""
    x = as_tensor(x)
    keep = x.data > lo
    return from_op(np.where(keep, x.data, lo), (x,), lambda g: (g * keep,))


def clamp_max(x, hi: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data < hi
    return from_op(np.where(keep, x.data, hi), (x,), lambda g: (g * keep,))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return from_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x) -> Tensor:
    x = as_tensor(x)
    return scale(sum(x), 1.0 / builtins.max(x.data.size, 1))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.data.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g) if _fancy(idx) else out.__setitem__(idx, g)
        return (out,)

    return from_op(np.asarray(x.data[idx]), (x,), bw)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return builtins.any(isinstance(i, (np.ndarray, list)) for i in items)


def concat(xs, axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bw)


def split(x, sizes, axis: int = 1) -> list[Tensor]:
    x = as_tensor(x)
    out, start = [], 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(start, start + n)
        out.append(getitem(x, tuple(sl)))
        start += n
    return out


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0), a.shape), _unbroadcast(np.where(cond, 0, g), b.shape))

    return from_op(np.where(cond, a.data, b.data), (a, b), bw)


def upsample_nearest(x, factor: int) -> Tensor:
    """Repeat every spatial location of a [B, C, H, W] tensor ``factor`` times per axis."""
    x = as_tensor(x)
    if factor == 1:
        return x
    B, C, H, W = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (B, C, H, factor, W, factor))

    def bw(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return from_op(out.reshape(B, C, H * factor, W * factor), (x,), bw)


def space_to_depth(x, t: int) -> Tensor:
    """[B, 1, H, W] -> [B, t*t, H/t, W/t]; channel k = i*t + j for column offset i, row offset j."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    if C != 1:
        raise ValueError("space_to_depth expects a single channel")
    r = reshape(x, (B, H // t, t, W // t, t))  # b, ty, j, tx, i
    r = transpose(r, (0, 4, 2, 1, 3))  # b, i, j, ty, tx
    return reshape(r, (B, t * t, H // t, W // t))


def constant(value, shape) -> Tensor:
    return Tensor(np.full(shape, value, dtype=get_dtype()))
