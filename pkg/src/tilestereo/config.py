"""Run configuration: plain-text ``section.key=value`` files plus overrides.

Recognised keys (defaults in brackets)::

    model.preset          base | kitti | l | xl | middlebury          [base]
    model.half_channels   halve the feature-extractor widths          [false]
    model.max_disparity   D in full-res pixels                        [64]
    model.predict_slant   false clamps slopes to 0 (fronto-parallel)   [true]
    model.seed            parameter initialisation seed                [0]

    data.source           synthetic | <directory with left/ right/ disp/>  [synthetic]
    data.height           crop height, multiple of 64                  [64]
    data.width            crop width, multiple of 64                   [128]
    data.train_seeds      scene seeds as "a:b" (half-open) or "a,b,c"  [0:8]
    data.fresh            new scene seed every draw (ignores train_seeds) [false]
    data.val_seeds        held-out scene seeds                         [1000:1008]
    data.num_segments     rectangles per synthetic scene               [3]
    data.d_min / d_max    synthetic disparity range                    [2 / 24]
    data.slope_max        largest synthetic plane slope                [0.15]
    data.augment          enable augmentation                          [false]
    data.aug_brightness / aug_patch / aug_jitter / aug_noise           [true]
    data.queue            prefetch depth of the sample producer (0 = inline) [2]

    train.steps           total optimizer steps                        [2500]
    train.schedule        "step:lr" pairs, steps strictly increasing   [0:4e-4,2000:1e-4]
    train.batch_size      samples per step                             [1]
    train.loss            sceneflow | general                          [sceneflow]
    train.seed            sampling and augmentation seed               [0]
    train.checkpoint_every                                             [500]
    train.val_every       0 disables periodic validation               [500]
    train.out_dir         checkpoints, log and config copy             [runs/default]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        a, b = (int(v) for v in text.split(":"))
        return list(range(a, b))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_schedule(text: str) -> list[tuple[int, float]]:
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            s, lr = item.split(":")
            pairs.append((int(s), float(lr)))
        except ValueError as exc:
            raise ConfigError(f"bad schedule entry {item!r}") from exc
    if not pairs or pairs[0][0] != 0:
        raise ConfigError("schedule must start at step 0")
    if any(b[0] <= a[0] for a, b in zip(pairs, pairs[1:])):
        raise ConfigError("schedule steps must be strictly increasing")
    return pairs


@dataclass(frozen=True)
class ModelSection:
    preset: str = "base"
    half_channels: bool = False
    max_disparity: int = 64
    predict_slant: bool = True
    seed: int = 0


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    height: int = 64
    width: int = 128
    train_seeds: str = "0:8"
    fresh: bool = False
    val_seeds: str = "1000:1008"
    num_segments: int = 3
    d_min: float = 2.0
    d_max: float = 24.0
    slope_max: float = 0.15
    augment: bool = False
    aug_brightness: bool = True
    aug_patch: bool = True
    aug_jitter: bool = True
    aug_noise: bool = True
    queue: int = 2


@dataclass(frozen=True)
class TrainSection:
    steps: int = 2500
    schedule: str = "0:4e-4,2000:1e-4"
    batch_size: int = 1
    loss: str = "sceneflow"
    seed: int = 0
    checkpoint_every: int = 500
    val_every: int = 500
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)

    def validate(self) -> "RunConfig":
        if self.data.height % 64 or self.data.width % 64:
            raise ConfigError("crop extents must be divisible by 64")
        parse_schedule(self.train.schedule)
        if self.train.steps < 0 or self.train.batch_size < 1:
            raise ConfigError("need steps >= 0 and batch_size >= 1")
        if self.train.loss not in ("sceneflow", "general"):
            raise ConfigError(f"unknown loss preset {self.train.loss!r}")
        if not self.data.fresh and not parse_seeds(self.data.train_seeds):
            raise ConfigError("no training seeds")
        return self

    @property
    def schedule(self) -> list[tuple[int, float]]:
        return parse_schedule(self.train.schedule)

    def lr_at(self, step: int) -> float:
        lr = None
        for s, v in self.schedule:
            if step >= s:
                lr = v
        return lr

    def with_value(self, key: str, raw: str) -> "RunConfig":
        try:
            section, name = key.strip().split(".", 1)
        except ValueError:
            raise ConfigError(f"key {key!r} needs a section prefix") from None
        if section not in ("model", "data", "train"):
            raise ConfigError(f"unknown section {section!r}")
        sec = getattr(self, section)
        types = {f.name: type(f.default) for f in fields(sec)}
        if name not in types:
            raise ConfigError(f"unknown key {key!r}")
        return replace(self, **{section: replace(sec, **{name: _convert(raw.strip(), types[name], key)})})

    def lines(self) -> list[str]:
        out = []
        for section in ("model", "data", "train"):
            sec = getattr(self, section)
            for f in fields(sec):
                v = getattr(sec, f.name)
                out.append(f"{section}.{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


def _convert(raw: str, kind: type, key: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def parse_lines(lines, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        cfg = cfg.with_value(k, v)
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_lines(text.splitlines(), cfg)
    cfg = parse_lines(overrides, cfg)
    return cfg.validate()
