"""Hierarchical tile-hypothesis propagation.

A hypothesis map is a [B, 16, gh, gw] tensor with channels
``[d, dx, dy, p_0..p_12]``; ``d`` is in pixels of the feature level it warps
against, ``dx``/``dy`` are disparity change per pixel (unit-free).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor, from_op
from .autodiff.sampling import linear_weights, scatter_rows

HYP_CHANNELS = 16


@dataclass(frozen=True)
class UpdateSpec:
    """Layout of one update CNN: trunk width and one dilation per residual block."""

    channels: int = 32
    dilations: tuple[int, ...] = (1, 1)
    convs_per_block: int = 1


# -- plane algebra -----------------------------------------------------------

def plane_offsets(T: int) -> np.ndarray:
    """Offsets of the T pixel centres of a tile from the tile centre: k - (T - 1) / 2."""
    return np.arange(T) - (T - 1) / 2.0


def expand_plane(d: float, dx: float, dy: float, T: int) -> np.ndarray:
    """Local disparity patch d'[i, j] = d + (i - c) dx + (j - c) dy, i along x, j along y."""
    if T < 1:
        raise ValueError("tile size must be >= 1")
    o = plane_offsets(T)
    return d + o[:, None] * dx + o[None, :] * dy


def _offset_maps(gh: int, gw: int, T: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    o = plane_offsets(T).astype(dtype)
    ox = np.tile(o, gw).reshape(1, 1, 1, gw * T)
    oy = np.tile(o, gh).reshape(1, 1, gh * T, 1)
    return ox, oy


def expand_map(h: Tensor, T: int) -> Tensor:
    """Per-pixel disparity [B, 1, gh*T, gw*T] from the plane part of a hypothesis map."""
    B, _, gh, gw = h.shape
    d, dx, dy = (ad.getitem(h, (slice(None), slice(c, c + 1))) for c in range(3))
    if T == 1:
        return d
    ox, oy = _offset_maps(gh, gw, T, h.dtype)
    up = ad.upsample_nearest
    return up(d, T) + up(dx, T) * Tensor(ox) + up(dy, T) * Tensor(oy)


def upsample2x(h: Tensor, offset: float = 1.0) -> Tensor:
    """Split every tile into 2x2 children one level finer.

    Child centres sit ``offset`` parent pixels from the parent centre (1 for
    4x4 tiles, 0.25 for single-pixel tiles).  Disparity follows the plane and
    is doubled for the finer level; slopes and descriptor are copied.
    """
    up = ad.upsample_nearest(h, 2)
    B, C, H2, W2 = up.shape
    sx = np.tile(np.array([-offset, offset], dtype=h.dtype), W2 // 2).reshape(1, 1, 1, W2)
    sy = np.tile(np.array([-offset, offset], dtype=h.dtype), H2 // 2).reshape(1, 1, H2, 1)
    d, dx, dy, rest = ad.split(up, [1, 1, 1, C - 3], axis=1)
    d_child = ad.scale(d + dx * Tensor(sx) + dy * Tensor(sy), 2.0)
    return ad.concat([d_child, dx, dy, rest], axis=1)


def rescale_units(h: Tensor, factor: float) -> Tensor:
    """Change the disparity unit of a hypothesis map (slopes are unit-free)."""
    d, rest = ad.split(h, [1, h.shape[1] - 1], axis=1)
    return ad.concat([ad.scale(d, factor), rest], axis=1)


# -- warping -----------------------------------------------------------------

def warp_cost(feat_left: Tensor, feat_right: Tensor, disp: Tensor) -> Tensor:
    """Per-pixel cost sum_c |e^L(x) - e^R(x - disp(x))| with linear sampling along x.

    Fused forward/backward; differentiable in both feature maps and ``disp``.
    """
    eL, eR, dd = feat_left.data, feat_right.data, disp.data
    B, C, H, W = eL.shape
    if eR.shape != eL.shape or dd.shape != (B, 1, H, W):
        raise ValueError(f"warp_cost shape mismatch: {eL.shape}, {eR.shape}, {dd.shape}")
    coords = np.arange(W, dtype=dd.dtype).reshape(1, 1, 1, W) - dd
    i0, f, inside = linear_weights(coords, W)
    i1 = np.minimum(i0 + 1, W - 1)
    v0 = np.take_along_axis(eR, np.broadcast_to(i0, eR.shape), axis=3)
    v1 = np.take_along_axis(eR, np.broadcast_to(i1, eR.shape), axis=3)
    diff = eL - (v0 + f * (v1 - v0))
    sgn = np.sign(diff)

    def bw(g):
        gs = g * sgn
        gL = gs if feat_left.requires_grad else None
        gR = gd = None
        if feat_right.requires_grad:
            gR = -(scatter_rows(gs * (1 - f), i0, W) + scatter_rows(gs * f, i1, W))
        if disp.requires_grad:
            # d cost / d coord = -sum_c sgn * (v1 - v0); coord = x - disp
            gd = (gs * (v1 - v0)).sum(axis=1, keepdims=True) * inside
        return gL, gR, gd

    return from_op(np.abs(diff).sum(axis=1, keepdims=True), (feat_left, feat_right, disp), bw)


def cost_vector(feat_left: Tensor, feat_right: Tensor, h: Tensor, T: int, shift: float = 0.0) -> Tensor:
    """phi(e, d' + shift) as a [B, T*T, gh, gw] map, channel k = i*T + j."""
    disp = expand_map(h, T)
    if shift:
        disp = disp + shift
    c = warp_cost(feat_left, feat_right, disp)
    return ad.space_to_depth(c, T) if T > 1 else c


def build_augmented(h: Tensor, feat_left: Tensor, feat_right: Tensor, T: int) -> Tensor:
    """a = [h, phi(d' - 1), phi(d'), phi(d' + 1)]  ->  16 + 3 T^2 channels."""
    gh, gw = h.shape[-2:]
    if feat_left.shape[-2:] != (gh * T, gw * T):
        raise ValueError(f"features {feat_left.shape[-2:]} do not match grid {gh}x{gw} with tile {T}")
    return ad.concat([h] + [cost_vector(feat_left, feat_right, h, T, s) for s in (-1.0, 0.0, 1.0)], axis=1)


# -- update network ----------------------------------------------------------

def augmented_channels(T: int) -> int:
    return HYP_CHANNELS + 3 * T * T


def build_update(store: ParameterStore, name: str, in_channels: int, n: int, spec: UpdateSpec) -> None:
    """1x1 reduce, one dilated 3x3 residual block per dilation, zero-initialised 3x3 head."""
    store.conv(f"{name}.reduce", spec.channels, n * in_channels, 1)
    for k, _ in enumerate(spec.dilations):
        for c in range(spec.convs_per_block):
            store.conv(_res_name(name, k, c, spec), spec.channels, spec.channels, 3)
    store.conv(f"{name}.head", n * (HYP_CHANNELS + 1), spec.channels, 3, zero=True)


def _res_name(name: str, block: int, conv: int, spec: UpdateSpec) -> str:
    return f"{name}.res{block}" if spec.convs_per_block == 1 else f"{name}.res{block}_{conv}"


def tile_update(augmented: list[Tensor], store: ParameterStore, name: str, spec: UpdateSpec, slope: float = 0.2):
    """Return [(delta_h_i, w_i)] for each input hypothesis map."""
    n = len(augmented)
    if n not in (1, 2):
        raise ValueError(f"unsupported number of hypotheses {n}")
    grid = augmented[0].shape[-2:]
    if any(a.shape[-2:] != grid for a in augmented):
        raise ValueError("augmented maps live on different grids")
    x = augmented[0] if n == 1 else ad.concat(augmented, axis=1)
    x = ad.leaky_relu(ad.conv2d(x, store[f"{name}.reduce.weight"], store[f"{name}.reduce.bias"]), slope)
    for k, dil in enumerate(spec.dilations):
        r = x
        for c in range(spec.convs_per_block):
            rn = _res_name(name, k, c, spec)
            r = ad.conv2d(ad.leaky_relu(r, slope), store[f"{rn}.weight"], store[f"{rn}.bias"], dilation=dil, padding=dil)
        x = x + r
    out = ad.conv2d(ad.leaky_relu(x, slope), store[f"{name}.head.weight"], store[f"{name}.head.bias"], padding=1)
    parts = ad.split(out, [HYP_CHANNELS, 1] * n, axis=1)
    return [(parts[2 * i], parts[2 * i + 1]) for i in range(n)]


def fuse(hyps: list[Tensor], confs: list[Tensor]) -> tuple[Tensor, np.ndarray]:
    """Per tile keep the hypothesis with the largest confidence; ties go to the first.

    Returns the fused map and the winning index per tile.
    """
    if len(hyps) == 1:
        return hyps[0], np.zeros(confs[0].shape, dtype=np.int64)
    w = np.concatenate([c.data for c in confs], axis=1)
    win = np.argmax(w, axis=1)[:, None]  # argmax returns the first maximum
    out = hyps[-1]
    for i in range(len(hyps) - 2, -1, -1):
        out = ad.where(win == i, hyps[i], out)
    return out, win


# -- full hierarchy ------------------------------------------------------------

@dataclass
class LevelOutput:
    """One updated hypothesis map retained for the losses."""

    name: str
    hyp: Tensor  # [B, 16, gh, gw] after the update
    conf: Tensor  # [B, 1, gh, gw]
    unit_scale: int  # full-res pixels per disparity unit
    tile: int  # tile footprint in full-res pixels
    truncate: float  # robust-loss truncation A


@dataclass
class PropagationResult:
    outputs: list[LevelOutput] = field(default_factory=list)
    disparity: Tensor | None = None  # [B, 1, H, W] full-res pixels
    slopes: Tensor | None = None  # [B, 2, H, W]
    winners: dict = field(default_factory=dict)


def _clamp_slant(h: Tensor, mask: Tensor | None) -> Tensor:
    return h if mask is None else h * mask


def run_pyramid(
    feats_left: list[Tensor],
    feats_right: list[Tensor],
    init_hyps: list[Tensor],
    store: ParameterStore,
    pyramid_spec: UpdateSpec,
    refine_specs: tuple[UpdateSpec, UpdateSpec, UpdateSpec],
    slope: float = 0.2,
    predict_slant: bool = True,
    truncate: float = 1.0,
) -> PropagationResult:
    """Coarse-to-fine propagation over levels M..0 followed by 4x4/2x2/1x1 refinement."""
    M = len(feats_left) - 1
    if M < 2:
        raise ValueError("refinement needs at least three feature levels")
    mask = None
    if not predict_slant:
        m = np.ones((1, HYP_CHANNELS, 1, 1), dtype=init_hyps[0].dtype)
        m[:, 1:3] = 0
        mask = Tensor(m)
    res = PropagationResult()

    current = None
    for l in range(M, -1, -1):
        name = f"prop{l}"
        inputs = [init_hyps[l]] if current is None else [upsample2x(current, 1.0), init_hyps[l]]
        aug = [build_augmented(h, feats_left[l], feats_right[l], 4) for h in inputs]
        updates = tile_update(aug, store, name, pyramid_spec, slope)
        hyps, confs = [], []
        for i, (h, (dh, w)) in enumerate(zip(inputs, updates)):
            hn = _clamp_slant(h + dh, mask)
            hyps.append(hn)
            confs.append(w)
            res.outputs.append(LevelOutput(f"{name}.h{i}", hn, w, 2**l, 4 * 2**l, truncate))
        current, res.winners[name] = fuse(hyps, confs)

    # level-0 tiles cover one pixel of e_2: convert units, keep the grid
    current = rescale_units(current, 0.25)
    for k, T in enumerate((4, 2, 1)):
        level = int(np.log2(T))
        name = f"refine{T}"
        if k > 0:
            current = upsample2x(current, 0.25)
        aug = build_augmented(current, feats_left[level], feats_right[level], 1)
        (dh, w), = tile_update([aug], store, name, refine_specs[k], slope)
        current = _clamp_slant(current + dh, mask)
        res.outputs.append(LevelOutput(name, current, w, T, T, float("inf")))

    res.disparity = ad.getitem(current, (slice(None), slice(0, 1)))
    res.slopes = ad.getitem(current, (slice(None), slice(1, 3)))
    return res


def build_propagation(
    store: ParameterStore,
    max_level: int,
    pyramid_spec: UpdateSpec,
    refine_specs: tuple[UpdateSpec, UpdateSpec, UpdateSpec],
) -> None:
    for l in range(max_level, -1, -1):
        n = 1 if l == max_level else 2
        build_update(store, f"prop{l}", augmented_channels(4), n, pyramid_spec)
    for T, spec in zip((4, 2, 1), refine_specs):
        build_update(store, f"refine{T}", augmented_channels(1), 1, spec)
