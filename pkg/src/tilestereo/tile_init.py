"""Fronto-parallel tile initialisation: tile embeddings, streaming matching, descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterStore, Tensor, concat, conv2d, from_op, leaky_relu, relu
from .autodiff.sampling import scatter_rows

EMBED_CHANNELS = 16
MLP_HIDDEN = 32
DESCRIPTOR_CHANNELS = 13


@dataclass(frozen=True)
class MatchConfig:
    max_disparity: int = 320  # full-resolution pixels

    def level_range(self, level: int) -> int:
        d = math.ceil(self.max_disparity / 2**level)
        if d < 1:
            raise ValueError("per-level disparity range must be >= 1")
        return d


@dataclass
class InitResult:
    level: int
    d_init: np.ndarray  # [B, 1, h, w] integer-valued, level-l pixels
    best_cost: Tensor  # [B, 1, h, w]
    descriptor: Tensor  # [B, 13, h, w]
    emb_left: Tensor  # [B, 16, h, w]
    emb_right: Tensor  # [B, 16, h, W_l - 3]
    max_disp: int

    def hypothesis(self) -> Tensor:
        """h_init = [d_init, 0, 0, p_init] as a [B, 16, h, w] tensor."""
        B, _, h, w = self.d_init.shape
        geo = np.zeros((B, 3, h, w), dtype=self.descriptor.dtype)
        geo[:, 0:1] = self.d_init
        return concat([Tensor(geo), self.descriptor], axis=1)


def build_tile_init(store: ParameterStore, level: int, feat_channels: int) -> None:
    p = f"init{level}"
    store.conv(f"{p}.tile4x4", EMBED_CHANNELS, feat_channels, 4)
    store.conv(f"{p}.mlp1", MLP_HIDDEN, EMBED_CHANNELS, 1)
    store.conv(f"{p}.mlp2", EMBED_CHANNELS, MLP_HIDDEN, 1)
    store.conv(f"{p}.descriptor", DESCRIPTOR_CHANNELS, EMBED_CHANNELS + 1, 1)


def tile_embed(feat: Tensor, role: str, store: ParameterStore, level: int, slope: float = 0.2) -> Tensor:
    """4x4 tile convolution (stride 4x4 reference, 4 rows x 1 column secondary) plus per-tile MLP."""
    H, W = feat.shape[-2:]
    if H % 4 or W % 4:
        raise ValueError(f"feature extent {H}x{W} not divisible by 4")
    if role == "reference":
        stride = (4, 4)
    elif role == "secondary":
        stride = (4, 1)
    else:
        raise ValueError(f"unknown role {role!r}")
    p = f"init{level}"
    x = leaky_relu(conv2d(feat, store[f"{p}.tile4x4.weight"], store[f"{p}.tile4x4.bias"], stride=stride), slope)
    x = relu(conv2d(x, store[f"{p}.mlp1.weight"], store[f"{p}.mlp1.bias"]))
    return conv2d(x, store[f"{p}.mlp2.weight"], store[f"{p}.mlp2.bias"])


def _tile_columns(width: int) -> np.ndarray:
    return 4 * np.arange(width, dtype=np.intp)


def cost_at(emb_left: np.ndarray, emb_right: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """L1 matching cost of every tile at one integer disparity, plus feasibility."""
    cols = _tile_columns(emb_left.shape[-1]) - d
    feasible = cols >= 0
    diff = emb_left - emb_right[..., np.maximum(cols, 0)]
    cost = np.abs(diff).sum(axis=1, keepdims=True)
    return cost, np.broadcast_to(feasible, cost.shape)


def match_tiles(emb_left, emb_right, max_disp: int) -> tuple[np.ndarray, np.ndarray]:
    """Streaming argmin of the tile matching cost over d in [0, max_disp].

    Only the running best cost and index are kept, never the full volume.
    Candidates whose secondary column 4x - d is negative are skipped; ties go
    to the smaller disparity.
    """
    eL = emb_left.data if isinstance(emb_left, Tensor) else np.asarray(emb_left)
    eR = emb_right.data if isinstance(emb_right, Tensor) else np.asarray(emb_right)
    best, _ = cost_at(eL, eR, 0)
    best = best.copy()
    arg = np.zeros(best.shape, dtype=np.int64)
    for d in range(1, max_disp + 1):
        cost, feasible = cost_at(eL, eR, d)
        better = feasible & (cost < best)
        best[better] = cost[better]
        arg[better] = d
    return arg, best


def gather_cost(emb_left: Tensor, emb_right: Tensor, disp: np.ndarray) -> Tensor:
    """Differentiable cost ||e^L_{x} - e^R_{4x-d}||_1 at per-tile integer disparities ``disp``.

    ``disp`` [B, 1, h, w] must be feasible (0 <= 4x - d).
    """
    eL, eR = emb_left.data, emb_right.data
    B, C, h, w = eL.shape
    Ws = eR.shape[-1]
    cols = _tile_columns(w).reshape(1, 1, 1, w) - np.asarray(disp, dtype=np.intp)
    if cols.min() < 0 or cols.max() >= Ws:
        raise ValueError("infeasible disparity in gather_cost")
    idx = np.broadcast_to(cols, (B, C, h, w))
    right = np.take_along_axis(eR, idx, axis=3)
    diff = eL - right
    sgn = np.sign(diff)

    def bw(g):
        gs = g * sgn
        gR = None
        if emb_right.requires_grad:
            gR = scatter_rows(-gs, cols, Ws)
        return gs, gR

    return from_op(np.abs(diff).sum(axis=1, keepdims=True), (emb_left, emb_right), bw)


def describe_tiles(best_cost: Tensor, emb_left: Tensor, store: ParameterStore, level: int, slope: float = 0.2) -> Tensor:
    p = f"init{level}.descriptor"
    x = concat([best_cost, emb_left], axis=1)
    return leaky_relu(conv2d(x, store[f"{p}.weight"], store[f"{p}.bias"]), slope)


def init_level(feat_left: Tensor, feat_right: Tensor, store: ParameterStore, level: int, max_disp: int, slope: float = 0.2) -> InitResult:
    eL = tile_embed(feat_left, "reference", store, level, slope)
    eR = tile_embed(feat_right, "secondary", store, level, slope)
    d_init, _ = match_tiles(eL, eR, max_disp)
    cost = gather_cost(eL, eR, d_init)
    desc = describe_tiles(cost, eL, store, level, slope)
    return InitResult(level, d_init.astype(eL.dtype), cost, desc, eL, eR, max_disp)


def init_all_scales(pyr_left, pyr_right, store: ParameterStore, match: MatchConfig, slope: float = 0.2) -> list[InitResult]:
    if len(pyr_left) != len(pyr_right):
        raise ValueError("pyramids differ in depth")
    return [
        init_level(eL, eR, store, l, match.level_range(l), slope)
        for l, (eL, eR) in enumerate(zip(pyr_left, pyr_right))
    ]
