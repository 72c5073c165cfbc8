"""Training losses and ground-truth preparation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor, from_op
from .autodiff.sampling import masked_maxpool2d
from .propagation import LevelOutput, plane_offsets
from .tile_init import InitResult, cost_at, gather_cost


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0  # contrastive margin
    alpha: float = 0.9
    c: float = 0.1
    A: float = 1.0  # truncation on pyramid levels
    B: float = 1.0  # slant gate
    C1: float = 1.0
    C2: float = 1.5

    def __post_init__(self):
        if self.beta <= 0 or self.c <= 0:
            raise ValueError("beta and c must be positive")
        if not self.C2 > self.C1:
            raise ValueError("C2 must exceed C1")
        if self.alpha in (0.0, 2.0):
            raise ValueError("alpha must not be 0 or 2")

    @classmethod
    def preset(cls, name: str) -> "LossConfig":
        if name == "sceneflow":
            return cls(alpha=0.9, c=0.1)
        if name == "general":
            return cls(alpha=0.8, c=0.5)
        raise ValueError(f"unknown loss preset {name!r}")


@dataclass
class GroundTruth:
    """Full-resolution supervision, all arrays [B, 1, H, W]."""

    disparity: np.ndarray
    valid: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    slope_valid: np.ndarray

    @classmethod
    def from_disparity(cls, disparity, valid) -> "GroundTruth":
        disparity = np.asarray(disparity, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        dx, dy, ok = fit_gt_plane(disparity, valid)
        return cls(disparity, valid, dx, dy, ok & valid)


# -- ground-truth preparation ------------------------------------------------

def downsample_gt(disparity: np.ndarray, valid: np.ndarray, level: int, tile: int = 4):
    """Masked max over each tile footprint (tile * 2^level), converted to level-l pixels."""
    k = tile * 2**level
    vals, ok = masked_maxpool2d(disparity, valid, k)
    return vals / 2**level, ok


def fit_gt_plane(disparity, valid, window: int = 9, rounds: int = 3, delta: float = 1.0, min_samples: int = 16):
    """Robust per-pixel plane fit d = a + dx*u + dy*v over a window.

    Least squares followed by ``rounds`` Huber-reweighted solves.  Pixels with
    fewer than ``min_samples`` valid neighbours or an ill-conditioned system
    get slope_valid = False.  Works on [..., H, W] arrays.
    """
    d = np.asarray(disparity, dtype=np.float64)
    m = np.asarray(valid, dtype=bool)
    r = window // 2
    pad = [(0, 0)] * (d.ndim - 2) + [(r, r), (r, r)]
    dw = sliding_window_view(np.pad(np.where(m, d, 0.0), pad), (window, window), axis=(-2, -1))
    mw = sliding_window_view(np.pad(m, pad), (window, window), axis=(-2, -1)).astype(np.float64)
    o = np.arange(-r, r + 1, dtype=np.float64)
    v, u = np.meshgrid(o, o, indexing="ij")  # window rows are y, columns are x
    X = np.stack([np.ones_like(u), u, v], axis=-1).reshape(-1, 3)
    dw = dw.reshape(dw.shape[:-2] + (-1,))
    mw = mw.reshape(mw.shape[:-2] + (-1,))
    count = mw.sum(axis=-1)

    w = mw
    coef = None
    ok = count >= min_samples
    for _ in range(rounds + 1):
        A = np.einsum("...k,ki,kj->...ij", w, X, X)
        b = np.einsum("...k,ki,...k->...i", w, X, dw)
        cond_ok = np.linalg.det(A) > 1e-6 * np.maximum(np.einsum("...ii->...", A), 1.0) ** 3
        A_safe = np.where((ok & cond_ok)[..., None, None], A, np.eye(3))
        coef = np.linalg.solve(A_safe, b[..., None])[..., 0]
        ok = ok & cond_ok
        res = np.abs(dw - np.einsum("...i,ki->...k", coef, X))
        w = mw * np.where(res <= delta, 1.0, delta / np.maximum(res, 1e-12))
    dx = np.where(ok, coef[..., 1], 0.0)
    dy = np.where(ok, coef[..., 2], 0.0)
    return dx, dy, ok


# -- initialisation loss -------------------------------------------------------

def subpixel_cost(cost_fn, d: float) -> float:
    """psi(d) = (d - floor d) cost(floor d + 1) + (floor d + 1 - d) cost(floor d)."""
    lo = math.floor(d)
    f = d - lo
    hi_cost = cost_fn(lo + 1) if f > 0 else 0.0
    return f * hi_cost + (1 - f) * cost_fn(lo)


def lowest_nonmatch(emb_left, emb_right, tile_gt: np.ndarray, max_disp: int):
    """Streaming argmin of the tile cost over feasible d outside [gt - 1.5, gt + 1.5].

    Returns (d_nm, found); ``found`` is False where no candidate survives.
    """
    eL = emb_left.data if isinstance(emb_left, Tensor) else np.asarray(emb_left)
    eR = emb_right.data if isinstance(emb_right, Tensor) else np.asarray(emb_right)
    best = np.full(eL.shape[:1] + (1,) + eL.shape[2:], np.inf)
    arg = np.zeros(best.shape, dtype=np.int64)
    for d in range(max_disp + 1):
        cost, feasible = cost_at(eL, eR, d)
        allowed = feasible & ((d < tile_gt - 1.5) | (d > tile_gt + 1.5))
        better = allowed & (cost < best)
        best[better] = cost[better]
        arg[better] = d
    return arg, np.isfinite(best)


def init_loss(init: InitResult, tile_gt: np.ndarray, tile_valid: np.ndarray, beta: float = 1.0):
    """Mean contrastive loss psi(d_gt) + max(beta - psi(d_nm), 0) over valid tiles.

    Tiles whose ground truth lies outside the matchable range [0, min(D, 4x)]
    are flagged and excluded.
    """
    eL, eR = init.emb_left, init.emb_right
    w = eL.shape[-1]
    upper = np.minimum(init.max_disp, 4 * np.arange(w)).reshape(1, 1, 1, w)
    gt = np.asarray(tile_gt, dtype=np.float64)
    in_range = (gt >= 0) & (gt <= upper)
    use = np.asarray(tile_valid, bool) & in_range
    n = int(use.sum())
    if n == 0:
        return None
    g = np.clip(gt, 0, upper)
    lo = np.floor(g).astype(np.int64)
    hi = np.minimum(lo + 1, upper)
    frac = (g - lo).astype(eL.dtype)
    c_lo = gather_cost(eL, eR, lo)
    c_hi = gather_cost(eL, eR, hi)
    psi_gt = c_lo * Tensor(1 - frac) + c_hi * Tensor(frac)

    d_nm, found = lowest_nonmatch(eL, eR, g, init.max_disp)
    psi_nm = gather_cost(eL, eR, d_nm)
    hinge = ad.relu(ad.neg(psi_nm) + beta)
    per_tile = psi_gt + hinge * Tensor(found.astype(eL.dtype))
    return ad.scale(ad.sum(per_tile * Tensor(use.astype(eL.dtype))), 1.0 / n)


# -- propagation losses --------------------------------------------------------

def robust_rho_value(x, alpha: float, c: float):
    """Closed-form general robust loss (alpha not in {0, 2})."""
    if alpha in (0.0, 2.0):
        raise ValueError("alpha must not be 0 or 2")
    b = abs(alpha - 2.0)
    x = np.asarray(x, dtype=np.float64)
    return (b / alpha) * (((x / c) ** 2 / b + 1.0) ** (alpha / 2.0) - 1.0)


def robust_rho(x, alpha: float, c: float) -> Tensor:
    if alpha in (0.0, 2.0):
        raise ValueError("alpha must not be 0 or 2")
    x = ad.as_tensor(x)
    b = abs(alpha - 2.0)
    xd = x.data
    base = (xd / c) ** 2 / b + 1.0
    out = (b / alpha) * (base ** (alpha / 2.0) - 1.0)
    dx = (xd / (c * c)) * base ** (alpha / 2.0 - 1.0)
    return from_op(out, (x,), lambda g: (g * dx,))


def expand_full(out: LevelOutput, channel: int = 0) -> Tensor:
    """Full-resolution map of a hypothesis quantity.

    For channel 0 the disparity plane is evaluated at every full-res pixel in
    full-res units; other channels are nearest-upsampled.
    """
    h = out.hyp
    F = out.tile
    sel = lambda c: ad.getitem(h, (slice(None), slice(c, c + 1)))
    if channel != 0:
        return ad.upsample_nearest(sel(channel), F)
    B, _, gh, gw = h.shape
    d = ad.upsample_nearest(ad.scale(sel(0), float(out.unit_scale)), F)
    if F == 1:
        return d
    o = plane_offsets(F).astype(h.dtype)
    ox = Tensor(np.tile(o, gw).reshape(1, 1, 1, gw * F))
    oy = Tensor(np.tile(o, gh).reshape(1, 1, gh * F, 1))
    return d + ad.upsample_nearest(sel(1), F) * ox + ad.upsample_nearest(sel(2), F) * oy


def _masked_mean(x: Tensor, mask: np.ndarray) -> Tensor | None:
    n = int(mask.sum())
    if n == 0:
        return None
    return ad.scale(ad.sum(x * Tensor(mask.astype(x.dtype))), 1.0 / n)


def prop_loss(d_hat: Tensor, gt: GroundTruth, truncate: float, alpha: float, c: float):
    diff = ad.sub(Tensor(gt.disparity), d_hat)
    a = ad.abs(diff)
    if math.isfinite(truncate):
        a = ad.clamp_max(a, truncate)
    return _masked_mean(robust_rho(a, alpha, c), gt.valid), diff.data


def slant_loss(dx: Tensor, dy: Tensor, gt: GroundTruth, diff: np.ndarray, B: float):
    mask = gt.valid & gt.slope_valid
    gate = (np.abs(diff) < B) & mask
    err = ad.abs(ad.sub(Tensor(gt.dx), dx)) + ad.abs(ad.sub(Tensor(gt.dy), dy))
    n = int(mask.sum())
    if n == 0:
        return None
    return ad.scale(ad.sum(err * Tensor(gate.astype(err.dtype))), 1.0 / n)


def conf_loss(w: Tensor, diff: np.ndarray, valid: np.ndarray, C1: float, C2: float):
    close = (np.abs(diff) < C1).astype(w.dtype)
    far = (np.abs(diff) > C2).astype(w.dtype)
    term = ad.relu(ad.neg(w) + 1.0) * Tensor(close) + ad.relu(w) * Tensor(far)
    return _masked_mean(term, valid)


@dataclass
class LossTerms:
    total: Tensor
    terms: dict[str, float] = field(default_factory=dict)


def level_losses(out: LevelOutput, gt: GroundTruth, cfg: LossConfig, use_slant: bool = True) -> dict[str, Tensor]:
    d_hat = expand_full(out, 0)
    lp, diff = prop_loss(d_hat, gt, out.truncate, cfg.alpha, cfg.c)
    res = {}
    if lp is not None:
        res["prop"] = lp
    if use_slant:
        ls = slant_loss(expand_full(out, 1), expand_full(out, 2), gt, diff, cfg.B)
        if ls is not None:
            res["slant"] = ls
    lw = conf_loss(ad.upsample_nearest(out.conf, out.tile), diff, gt.valid, cfg.C1, cfg.C2)
    if lw is not None:
        res["conf"] = lw
    return res


def total_loss(result, gt: GroundTruth, cfg: LossConfig, use_slant: bool = True, skip: set | None = None) -> LossTerms:
    """Unweighted sum of init losses per level and prop/slant/conf per updated hypothesis.

    ``skip`` names levels (``init{l}`` or hypothesis names) to leave out.
    """
    skip = skip or set()
    parts: dict[str, Tensor] = {}
    for init in result.init:
        key = f"init{init.level}"
        if key in skip:
            continue
        tg, tv = downsample_gt(gt.disparity, gt.valid, init.level)
        li = init_loss(init, tg, tv, cfg.beta)
        if li is not None:
            parts[f"{key}.init"] = li
    for out in result.prop.outputs:
        if out.name in skip:
            continue
        for k, v in level_losses(out, gt, cfg, use_slant).items():
            parts[f"{out.name}.{k}"] = v
    if not parts:
        total = Tensor(np.zeros((), dtype=ad.get_dtype()))
    else:
        vals = list(parts.values())
        total = vals[0]
        for v in vals[1:]:
            total = total + v
    return LossTerms(total, {k: float(v.data) for k, v in parts.items()})
