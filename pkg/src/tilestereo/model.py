"""Model configuration, presets, parameter construction and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ParameterStore, Tensor
from .features import UNetConfig, build_unet, extract
from .propagation import PropagationResult, UpdateSpec, build_propagation, run_pyramid
from .tile_init import InitResult, MatchConfig, build_tile_init, init_all_scales

REFINE_DILATIONS = (1, 2, 4, 8, 1, 1)


@dataclass(frozen=True)
class ModelConfig:
    unet: UNetConfig = field(default_factory=UNetConfig)
    max_disparity: int = 320
    pyramid: UpdateSpec = field(default_factory=UpdateSpec)
    refine: tuple[UpdateSpec, UpdateSpec, UpdateSpec] = (
        UpdateSpec(32, REFINE_DILATIONS),
        UpdateSpec(32, REFINE_DILATIONS),
        UpdateSpec(16, REFINE_DILATIONS),
    )
    slope: float = 0.2
    predict_slant: bool = True
    truncate: float = 1.0  # robust-loss truncation A for the pyramid levels

    @property
    def match(self) -> MatchConfig:
        return MatchConfig(self.max_disparity)

    @property
    def pad_multiple(self) -> int:
        return 4 * 2**self.unet.max_level


def preset(name: str, **overrides) -> ModelConfig:
    """Named architecture presets; only "base" is normative, the others are constructible."""
    name = name.lower()
    if name == "base":
        cfg = ModelConfig()
    elif name == "kitti":
        cfg = ModelConfig(
            refine=(UpdateSpec(32, (1, 3, 1, 1)), UpdateSpec(32, (1, 3, 1, 1)), UpdateSpec(16, (1, 1)))
        )
    elif name in ("l", "large"):
        cfg = ModelConfig(
            unet=UNetConfig((32, 40, 48, 56, 64)),
            refine=tuple(UpdateSpec(32, REFINE_DILATIONS) for _ in range(3)),
        )
    elif name in ("xl", "xlarge"):
        cfg = ModelConfig(
            unet=UNetConfig((32, 40, 48, 56, 64)),
            refine=tuple(UpdateSpec(64, REFINE_DILATIONS) for _ in range(3)),
        )
    elif name == "middlebury":
        cfg = ModelConfig(
            unet=UNetConfig((32, 40, 48, 56, 64, 64)),
            refine=tuple(UpdateSpec(32, REFINE_DILATIONS) for _ in range(3)),
        )
    else:
        raise ValueError(f"unknown preset {name!r}")
    return replace(cfg, **overrides) if overrides else cfg


def half_channels(cfg: ModelConfig) -> ModelConfig:
    """Same architecture with feature-extractor channels halved."""
    unet = replace(cfg.unet, channels=tuple(max(1, c // 2) for c in cfg.unet.channels))
    return replace(cfg, unet=unet)


def build_model(cfg: ModelConfig, seed: int = 0) -> ParameterStore:
    store = ParameterStore(seed)
    build_unet(cfg.unet, store)
    for l, c in enumerate(cfg.unet.channels):
        build_tile_init(store, l, c)
    build_propagation(store, cfg.unet.max_level, cfg.pyramid, cfg.refine)
    return store


@dataclass
class ForwardResult:
    feats_left: list[Tensor]
    feats_right: list[Tensor]
    init: list[InitResult]
    prop: PropagationResult

    @property
    def disparity(self) -> Tensor:
        return self.prop.disparity


def forward(store: ParameterStore, cfg: ModelConfig, left, right) -> ForwardResult:
    """Run extraction, initialisation and propagation on a rectified pair [B, C, H, W]."""
    left = left if isinstance(left, Tensor) else Tensor(left)
    right = right if isinstance(right, Tensor) else Tensor(right)
    if left.shape != right.shape:
        raise ValueError("left and right images differ in shape")
    fl = extract(left, store, cfg.unet)
    fr = extract(right, store, cfg.unet)
    init = init_all_scales(fl, fr, store, cfg.match, cfg.slope)
    prop = run_pyramid(
        fl,
        fr,
        [r.hypothesis() for r in init],
        store,
        cfg.pyramid,
        cfg.refine,
        cfg.slope,
        cfg.predict_slant,
        cfg.truncate,
    )
    return ForwardResult(fl, fr, init, prop)


def pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Replicate-pad the bottom/right of [..., H, W] up to a multiple; returns (padded, (H, W))."""
    H, W = img.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph == 0 and pw == 0:
        return img, (H, W)
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pad, mode="edge"), (H, W)


def predict(store: ParameterStore, cfg: ModelConfig, left: np.ndarray, right: np.ndarray):
    """Inference on [B, C, H, W] arrays of any extent; returns (disparity, slopes) cropped back."""
    lp, (H, W) = pad_to_multiple(np.asarray(left), cfg.pad_multiple)
    rp, _ = pad_to_multiple(np.asarray(right), cfg.pad_multiple)
    out = forward(store, cfg, lp, rp)
    disp = out.prop.disparity.data[..., :H, :W]
    slopes = out.prop.slopes.data[..., :H, :W]
    return disp, slopes
