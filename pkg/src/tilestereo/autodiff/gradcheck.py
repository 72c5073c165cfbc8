"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, index, step: float = 1e-5) -> float:
    old = t.data[index]
    t.data[index] = old + step
    fp = float(fn().data.sum())
    t.data[index] = old - step
    fm = float(fn().data.sum())
    t.data[index] = old
    return (fp - fm) / (2 * step)


def one_sided(fn: Callable[[], Tensor], t: Tensor, index, step: float) -> tuple[float, float]:
    """Backward and forward difference slopes at ``index``."""
    old = t.data[index]
    f0 = float(fn().data.sum())
    t.data[index] = old + step
    fp = float(fn().data.sum())
    t.data[index] = old - step
    fm = float(fn().data.sum())
    t.data[index] = old
    return (f0 - fm) / step, (fp - f0) / step


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        out = fn()
        loss = out if out.data.size == 1 else out.sum()
    backward(loss, tape)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def relative_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    samples: int | None = None,
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
    skip: Callable[[int, tuple], bool] | None = None,
    floor: float = 1e-6,
    refine: int = 0,
    tol: float = 1e-3,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``fn`` must build its output from ``inputs`` (the output is summed when not
    scalar).  With ``samples`` set, that many random entries per input are
    checked; otherwise every entry is.  ``skip(k, index)`` excludes entries,
    e.g. near a kink.

    With ``refine`` > 0, an entry whose error exceeds ``tol`` is re-examined:
    if its backward and forward slopes disagree (a kink lies inside the step),
    the step shrinks tenfold, up to ``refine`` times, until they agree and the
    central difference at that step is used.  Entries with consistent
    one-sided slopes are never refined, so a smooth mismatch still fails.
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_grads(fn, inputs)
    worst = 0.0
    for k, (t, g) in enumerate(zip(inputs, grads)):
        flat = np.arange(t.data.size)
        if samples is not None and samples < t.data.size:
            flat = rng.choice(t.data.size, size=samples, replace=False)
        for f in flat:
            idx = np.unravel_index(int(f), t.data.shape)
            if skip is not None and skip(k, idx):
                continue
            a = float(g[idx])
            err = relative_error(a, numeric_grad(fn, t, idx, step), floor)
            h = step
            for _ in range(refine):
                if err <= tol:
                    break
                left, right = one_sided(fn, t, idx, h)
                if relative_error(left, right, floor) <= tol:
                    break
                h /= 10
                err = relative_error(a, numeric_grad(fn, t, idx, h), floor)
            worst = max(worst, err)
    return worst
