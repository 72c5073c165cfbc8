"""Synthetic piecewise-planar stereo pairs with exact ground truth.

Each scene is a background plane plus K axis-aligned rectangles, every surface
carrying its own random-dot texture and a disparity plane
``d(u, v) = p0 + p1 u + p2 v`` in left-image coordinates.  Visibility in both
views is resolved by a z-buffer on disparity (larger disparity is closer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter


@dataclass
class StereoSample:
    left: np.ndarray  # [H, W] or [H, W, 3] in [0, 1]
    right: np.ndarray
    disparity: np.ndarray  # [H, W] full-res pixels
    valid: np.ndarray  # [H, W] bool
    dx: np.ndarray | None = None
    dy: np.ndarray | None = None
    slope_valid: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.disparity.shape

    def copy(self) -> "StereoSample":
        c = lambda a: None if a is None else a.copy()
        return StereoSample(*(c(getattr(self, f)) for f in self.__dataclass_fields__))


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 128
    num_segments: int = 3
    d_min: float = 2.0
    d_max: float = 24.0
    slope_max: float = 0.15
    texture_blur: float = 0.7
    seed: int = 0
    boundary_margin: int = 1

    def validate(self) -> None:
        if self.height % 64 or self.width % 64:
            raise ValueError("scene extents must be divisible by 64")
        if not 0 <= self.d_min <= self.d_max:
            raise ValueError("need 0 <= d_min <= d_max")
        if self.d_max >= self.width:
            raise ValueError("d_max must be smaller than the image width")
        if self.slope_max >= 0.5:
            raise ValueError("slope_max must stay below 0.5")


@dataclass(frozen=True)
class Surface:
    x0: int
    x1: int
    y0: int
    y1: int
    p: tuple[float, float, float]  # d = p0 + p1 u + p2 v

    def disparity(self, u, v):
        return self.p[0] + self.p[1] * u + self.p[2] * v


def _random_plane(rng, x0, x1, y0, y1, d_lo, d_hi, slope_max):
    """Plane whose disparity stays inside [d_lo, d_hi] on the rectangle."""
    cx, cy = (x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0
    hx, hy = (x1 - 1 - x0) / 2.0, (y1 - 1 - y0) / 2.0
    d_c = rng.uniform(d_lo, d_hi)
    sx, sy = rng.uniform(-slope_max, slope_max, size=2)
    spread = abs(sx) * hx + abs(sy) * hy
    room = min(d_c - d_lo, d_hi - d_c)
    if spread > room:
        k = room / spread if spread > 0 else 0.0
        sx, sy = sx * k, sy * k
    return (d_c - sx * cx - sy * cy, sx, sy)


def make_surfaces(cfg: SceneConfig, rng) -> list[Surface]:
    H, W = cfg.height, cfg.width
    span = cfg.d_max - cfg.d_min
    bg = Surface(0, W, 0, H, _random_plane(rng, 0, W, 0, H, cfg.d_min, cfg.d_min + 0.4 * span, cfg.slope_max))
    out = [bg]
    for _ in range(cfg.num_segments):
        w = int(rng.integers(W // 6, W // 2 + 1))
        h = int(rng.integers(H // 5, H // 2 + 1))
        x0 = int(rng.integers(0, W - w + 1))
        y0 = int(rng.integers(0, H - h + 1))
        p = _random_plane(rng, x0, x0 + w, y0, y0 + h, cfg.d_min + 0.3 * span, cfg.d_max, cfg.slope_max)
        out.append(Surface(x0, x0 + w, y0, y0 + h, p))
    return out


def _texture(rng, H, W, blur):
    t = rng.random((H, W))
    if blur > 0:
        t = gaussian_filter(t, blur, mode="reflect")
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return t


def _sample_rows(tex: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Linear interpolation of tex [H, Wt] along x at u [H, W] (clamped)."""
    Wt = tex.shape[1]
    u = np.clip(u, 0, Wt - 1)
    i0 = np.minimum(np.floor(u).astype(np.intp), Wt - 2)
    f = u - i0
    rows = np.arange(tex.shape[0])[:, None]
    return (1 - f) * tex[rows, i0] + f * tex[rows, i0 + 1]


def render(surfaces: list[Surface], textures: list[np.ndarray], H: int, W: int, margin: int = 1):
    """Render both views and ground truth for a list of surfaces."""
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)

    # left view: z-buffer over surfaces covering each pixel
    disp = np.full((H, W), -np.inf)
    label = np.zeros((H, W), dtype=np.intp)
    for k, s in enumerate(surfaces):
        cover = (u >= s.x0) & (u < s.x1) & (v >= s.y0) & (v < s.y1)
        d = s.disparity(u, v)
        top = cover & (d > disp)
        disp[top] = d[top]
        label[top] = k
    left = np.zeros((H, W))
    dx = np.zeros((H, W))
    dy = np.zeros((H, W))
    for k, s in enumerate(surfaces):
        m = label == k
        left[m] = textures[k][v[m].astype(np.intp), u[m].astype(np.intp)]
        dx[m], dy[m] = s.p[1], s.p[2]

    # right view: for each right pixel find the left-coordinate preimage on every surface
    right_disp = np.full((H, W), -np.inf)
    right = np.zeros((H, W))
    pre = []
    for k, s in enumerate(surfaces):
        uk = (u + s.p[0] + s.p[2] * v) / (1.0 - s.p[1])
        cover = (uk >= s.x0 - 0.5) & (uk < s.x1 - 0.5) & (v >= s.y0) & (v < s.y1)
        dk = s.disparity(uk, v)
        pre.append((uk, cover, dk))
        top = cover & (dk > right_disp)
        right_disp[top] = dk[top]
        if top.any():
            right[top] = _sample_rows(textures[k], uk)[top]

    # a left pixel is valid when its match is in frame and not hidden by a closer surface
    ur = u - disp
    valid = (ur >= 0) & (ur <= W - 1)
    for k, s in enumerate(surfaces):
        # disparity of surface k at the right-image position ur on row v
        uk = (ur + s.p[0] + s.p[2] * v) / (1.0 - s.p[1])
        cover = (uk >= s.x0 - 0.5) & (uk < s.x1 - 0.5) & (v >= s.y0) & (v < s.y1)
        dk = s.disparity(uk, v)
        valid &= ~(cover & (label != k) & (dk > disp + 1e-6))

    lab_max = maximum_filter(label, size=2 * margin + 1, mode="nearest")
    lab_min = minimum_filter(label, size=2 * margin + 1, mode="nearest")
    slope_valid = (lab_max == lab_min) & valid
    return left, right, disp, valid, dx, dy, slope_valid


def gen_scene(cfg: SceneConfig) -> StereoSample:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    surfaces = make_surfaces(cfg, rng)
    Wt = cfg.width + int(np.ceil(cfg.d_max)) + 4
    textures = [_texture(rng, cfg.height, Wt, cfg.texture_blur) for _ in surfaces]
    left, right, disp, valid, dx, dy, sv = render(surfaces, textures, cfg.height, cfg.width, cfg.boundary_margin)
    f32 = lambda a: a.astype(np.float32)
    return StereoSample(f32(left), f32(right), f32(disp), valid, f32(dx), f32(dy), sv)


def constant_scene(height: int, width: int, disparity: float, seed: int = 0, blur: float = 0.7) -> StereoSample:
    """Single fronto-parallel plane; integer disparities give pixel-exact warps."""
    rng = np.random.default_rng(seed)
    tex = _texture(rng, height, width + int(np.ceil(disparity)) + 4, blur)
    s = Surface(0, width, 0, height, (float(disparity), 0.0, 0.0))
    left, right, disp, valid, dx, dy, sv = render([s], [tex], height, width)
    f32 = lambda a: a.astype(np.float32)
    return StereoSample(f32(left), f32(right), f32(disp), valid, f32(dx), f32(dy), sv)


def photometric_error(sample: StereoSample) -> float:
    """Mean |left(u) - right(u - d)| over valid pixels, right sampled linearly."""
    H, W = sample.shape
    u = np.arange(W)[None, :] - sample.disparity.astype(np.float64)
    warped = _sample_rows(sample.right.astype(np.float64), u)
    return float(np.abs(sample.left - warped)[sample.valid].mean())
