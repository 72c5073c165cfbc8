"""U-Net feature extractor producing a multi-scale feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import ParameterStore, Tensor, concat, conv2d, leaky_relu, transposed_conv2d


@dataclass(frozen=True)
class UNetConfig:
    channels: tuple[int, ...] = (16, 16, 24, 24, 32)  # fine to coarse
    in_channels: int = 1
    slope: float = 0.2

    def __post_init__(self):
        if len(self.channels) < 1 or min(self.channels) <= 0:
            raise ValueError("channels must be a non-empty list of positive ints")
        if self.in_channels <= 0:
            raise ValueError("in_channels must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.channels)

    @property
    def max_level(self) -> int:
        return len(self.channels) - 1


def build_unet(cfg: UNetConfig, store: ParameterStore, prefix: str = "unet") -> None:
    C = cfg.channels
    store.conv(f"{prefix}.stem.conv3x3", C[0], cfg.in_channels, 3)
    for l in range(1, cfg.num_levels):
        store.conv(f"{prefix}.down{l}.conv2x2", C[l], C[l - 1], 2)
        store.conv(f"{prefix}.down{l}.conv3x3", C[l], C[l], 3)
    for l in range(cfg.num_levels - 2, -1, -1):
        store.tconv(f"{prefix}.up{l}.tconv2x2", C[l + 1], C[l], 2)
        store.conv(f"{prefix}.up{l}.conv1x1", C[l], 2 * C[l], 1)
        store.conv(f"{prefix}.up{l}.conv3x3", C[l], C[l], 3)


def _conv(store, name, x, slope, **kw):
    return leaky_relu(conv2d(x, store[f"{name}.weight"], store[f"{name}.bias"], **kw), slope)


def extract(image: Tensor, store: ParameterStore, cfg: UNetConfig, prefix: str = "unet") -> list[Tensor]:
    """Return feature maps e_0..e_M for an image batch [B, in_channels, H, W].

    e_l has extent (H / 2^l, W / 2^l).  The deepest map is the encoder output.
    """
    H, W = image.shape[-2:]
    step = 2**cfg.max_level
    if H % step or W % step:
        raise ValueError(f"image extent {H}x{W} not divisible by {step}")
    s = cfg.slope
    skips = [_conv(store, f"{prefix}.stem.conv3x3", image, s, padding=1)]
    for l in range(1, cfg.num_levels):
        x = _conv(store, f"{prefix}.down{l}.conv2x2", skips[-1], s, stride=2)
        skips.append(_conv(store, f"{prefix}.down{l}.conv3x3", x, s, padding=1))

    pyramid: list[Tensor] = [None] * cfg.num_levels  # type: ignore[list-item]
    pyramid[-1] = skips[-1]
    for l in range(cfg.num_levels - 2, -1, -1):
        name = f"{prefix}.up{l}"
        up = leaky_relu(
            transposed_conv2d(pyramid[l + 1], store[f"{name}.tconv2x2.weight"], store[f"{name}.tconv2x2.bias"], stride=2),
            s,
        )
        x = _conv(store, f"{name}.conv1x1", concat([up, skips[l]], axis=1), s)
        pyramid[l] = _conv(store, f"{name}.conv3x3", x, s, padding=1)
    return pyramid
