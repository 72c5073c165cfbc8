"""Named parameter storage, initialisation and the Adam optimizer."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, get_dtype


class MissingGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParameterStore:
    """Ordered mapping from hierarchical names to trainable tensors."""

    def __init__(self, seed: int = 0):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: dict[str, AdamState] = {}
        self.rng = np.random.default_rng(seed)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=get_dtype()), requires_grad=True)
        self.params[name] = t
        return t

    def conv(self, name: str, out_c: int, in_c: int, kh: int, kw: int | None = None, zero: bool = False):
        """Create ``name.weight`` [out, in, kh, kw] and ``name.bias`` [1, out, 1, 1].

        Weights are fan-in scaled uniform, biases zero.
        """
        kw = kh if kw is None else kw
        shape = (out_c, in_c, kh, kw)
        if zero:
            w = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (in_c * kh * kw))
            w = self.rng.uniform(-bound, bound, size=shape)
        return self.add(f"{name}.weight", w), self.add(f"{name}.bias", np.zeros((1, out_c, 1, 1)))

    def tconv(self, name: str, in_c: int, out_c: int, k: int):
        """Transposed-conv weight [in, out, k, k] and bias [1, out, 1, 1]."""
        bound = np.sqrt(6.0 / (in_c * k * k))
        w = self.rng.uniform(-bound, bound, size=(in_c, out_c, k, k))
        return self.add(f"{name}.weight", w), self.add(f"{name}.bias", np.zeros((1, out_c, 1, 1)))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> None:
        for p in self.params.values():
            p.data = p.data.astype(dtype)

    def copy_from(self, other: "ParameterStore") -> None:
        for name, p in self.params.items():
            p.data = other.params[name].data.astype(p.data.dtype, copy=True)


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    allow_missing: bool = True,
) -> None:
    """One bias-corrected Adam update over every parameter; clears gradients.

    Parameters that received no gradient this step are skipped when
    ``allow_missing`` is set, otherwise :class:`MissingGradientError` is raised.
    """
    if not any(p.grad is not None for p in store.params.values()):
        raise MissingGradientError("no gradients populated")
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            if allow_missing:
                continue
            raise MissingGradientError(name)
        st = store.state.get(name)
        if st is None:
            st = store.state[name] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
        st.step += 1
        st.m *= beta1
        st.m += (1 - beta1) * g
        st.v *= beta2
        st.v += (1 - beta2) * g * g
        mhat = st.m / (1 - beta1**st.step)
        vhat = st.v / (1 - beta2**st.step)
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)
        p.grad = None
