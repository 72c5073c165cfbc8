"""Dense tensors with tape-based reverse-mode differentiation."""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_DTYPE = np.float32
_ACTIVE_TAPES: list["Tape"] = []


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def get_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    """Switch the default compute precision (float32 or float64)."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    old = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode AD.

    Tensors produced while a :class:`Tape` is active and that depend on a
    ``requires_grad`` input are recorded on that tape.  Leaf tensors (those not
    produced by a recorded op) receive their adjoint in ``.grad`` after
    :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _not_scalar():
    raise ValueError("item() requires a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; ops executed inside it are recorded.  A tape can
    be consumed by exactly one :func:`backward` call.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed")
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        self.entries.append((out, parents, backward_fn))


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def from_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``data`` as the result of an op and record it if needed.

    ``backward_fn`` maps the output adjoint to one adjoint (or None) per
    parent, in order.  This is the extension point for fused kernels.
    """
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == _DTYPE else data.astype(_DTYPE)
    out.grad = None
    out.is_leaf = True
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, tuple(parents), backward_fn)
    return out


def backward(loss: Tensor, tape: Tape, check_finite: bool = True) -> None:
    """Propagate adjoints from the scalar ``loss`` through ``tape``.

    Gradients of leaf tensors accumulate into ``.grad``.
    """
    if tape.consumed:
        raise TapeError("tape already consumed")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a single element, got shape {loss.shape}")
    tape.consumed = True
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        pgrads = fn(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise ValueError(f"adjoint shape {pg.shape} != tensor shape {p.data.shape}")
            if p.is_leaf:
                if check_finite and not np.all(np.isfinite(pg)):
                    raise NonFiniteError("non-finite gradient")
                p.grad = pg.astype(p.data.dtype, copy=True) if p.grad is None else p.grad + pg
            else:
                key = id(p)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    tape.entries.clear()
