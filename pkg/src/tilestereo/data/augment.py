"""Photometric and geometric training augmentations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import zoom

from .synthetic import StereoSample


@dataclass(frozen=True)
class AugmentOptions:
    brightness: bool = True
    symmetric_range: tuple[float, float] = (0.8, 1.2)
    asymmetric_range: tuple[float, float] = (0.95, 1.05)
    patch_replace: bool = True
    patch_min: tuple[int, int] = (50, 50)  # (height, width)
    patch_max: tuple[int, int] = (180, 250)
    invalidate_patch: bool = True
    y_jitter: bool = True
    y_range: float = 2.0
    noise: bool = True
    noise_variance_max: float = 5.0  # in 8-bit intensity levels

    @classmethod
    def none(cls) -> "AugmentOptions":
        return cls(brightness=False, patch_replace=False, y_jitter=False, noise=False)


def _per_channel(img, fn):
    if img.ndim == 2:
        return fn(img)
    return np.stack([fn(img[..., c]) for c in range(img.shape[2])], axis=-1)


def augment(sample: StereoSample, seed: int, opts: AugmentOptions = AugmentOptions()) -> StereoSample:
    """Apply brightness/contrast, right-patch replacement, vertical jitter and noise, in that order."""
    rng = np.random.default_rng(seed)
    out = sample.copy()
    left = out.left.astype(np.float64)
    right = out.right.astype(np.float64)
    H, W = out.shape

    if opts.brightness:
        sym = rng.uniform(*opts.symmetric_range)
        aL, aR = rng.uniform(*opts.asymmetric_range, size=2)
        left = np.clip(left * sym * aL, 0, 1)
        right = np.clip(right * sym * aR, 0, 1)

    if opts.patch_replace:
        ph = int(rng.integers(min(opts.patch_min[0], H), min(opts.patch_max[0], H) + 1))
        pw = int(rng.integers(min(opts.patch_min[1], W), min(opts.patch_max[1], W) + 1))
        ty, tx = int(rng.integers(0, H - ph + 1)), int(rng.integers(0, W - pw + 1))
        sy, sx = int(rng.integers(0, H - ph + 1)), int(rng.integers(0, W - pw + 1))
        right = right.copy()
        right[ty : ty + ph, tx : tx + pw] = right[sy : sy + ph, sx : sx + pw].copy()
        if opts.invalidate_patch:
            # left pixels whose match lands inside the replaced rectangle
            rows = np.arange(H)[:, None]
            ur = np.arange(W)[None, :] - out.disparity
            hit = (rows >= ty) & (rows < ty + ph) & (ur >= tx) & (ur < tx + pw)
            out.valid = out.valid & ~hit

    if opts.y_jitter:
        gh, gw = max(1, H // 64), max(1, W // 64)
        coarse = rng.uniform(-opts.y_range, opts.y_range, size=(gh, gw))
        field = zoom(coarse, (H / gh, W / gw), order=1, mode="nearest", grid_mode=True)[:H, :W]
        ys = np.clip(np.arange(H)[:, None] + field, 0, H - 1)
        y0 = np.minimum(np.floor(ys).astype(np.intp), H - 2)
        f = ys - y0
        cols = np.arange(W)[None, :]

        def shift(ch):
            return (1 - f) * ch[y0, cols] + f * ch[y0 + 1, cols]

        right = _per_channel(right, shift)

    if opts.noise:
        var = rng.uniform(0, opts.noise_variance_max)
        sigma = np.sqrt(var) / 255.0
        left = np.clip(left + rng.normal(0, sigma, size=left.shape), 0, 1)
        right = np.clip(right + rng.normal(0, sigma, size=right.shape), 0, 1)

    out.left = left.astype(sample.left.dtype)
    out.right = right.astype(sample.right.dtype)
    return out

