"""Training loop, checkpointing and validation for a :class:`RunConfig`."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, Tape, adam_step, backward, save_checkpoint
from .config import RunConfig, parse_seeds
from .data import AugmentOptions, FormatError, SampleQueue, SceneConfig, StereoSample, augment, gen_scene, read_image, read_pfm
from .losses import GroundTruth, LossConfig, total_loss
from .metrics import MetricReport
from .model import ModelConfig, build_model, forward, half_channels, predict, preset


class NumericalAbort(RuntimeError):
    """Raised when the loss or its gradient stops being finite."""

    def __init__(self, step: int, terms: dict[str, float]):
        self.step, self.terms = step, terms
        super().__init__(f"non-finite loss at step {step}")

    def dump(self) -> str:
        rows = [f"non-finite loss at step {self.step}; per-term values:"]
        rows += [f"  {k} = {v!r}" for k, v in self.terms.items()]
        return "\n".join(rows)


class DataError(RuntimeError):
    pass


def model_config(run: RunConfig) -> ModelConfig:
    m = run.model
    cfg = preset(m.preset, max_disparity=m.max_disparity, predict_slant=m.predict_slant)
    return half_channels(cfg) if m.half_channels else cfg


def scene_config(run: RunConfig, seed: int) -> SceneConfig:
    d = run.data
    return SceneConfig(d.height, d.width, d.num_segments, d.d_min, d.d_max, d.slope_max, seed=seed)


def augment_options(run: RunConfig) -> AugmentOptions:
    d = run.data
    return AugmentOptions(brightness=d.aug_brightness, patch_replace=d.aug_patch, y_jitter=d.aug_jitter, noise=d.aug_noise)


def to_gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=2) if img.ndim == 3 else img


# -- data sources --------------------------------------------------------------

class SyntheticSource:
    def __init__(self, run: RunConfig):
        self.run = run
        self.seeds = parse_seeds(run.data.train_seeds)
        self._cache: dict[int, StereoSample] = {}
        if not run.data.fresh:
            for s in self.seeds:
                self._cache[s] = gen_scene(scene_config(run, s))

    def draw(self, index: int, rng) -> StereoSample:
        if self.run.data.fresh:
            return gen_scene(scene_config(self.run, 1_000_000 + index))
        s = self.seeds[index % len(self.seeds)]
        return self._cache[s].copy()


class DirectorySource:
    """``left/`` and ``right/`` PGM/PPM images with ``disp/`` PFM maps sharing file stems.

    Non-finite ground-truth values mark invalid pixels.  Slopes come from the
    robust plane fit.  Each draw takes a random crop of the configured size.
    """

    def __init__(self, run: RunConfig):
        root = Path(run.data.source)
        if not root.is_dir():
            raise DataError(f"data source {root} is not a directory")
        self.items = []
        for disp in sorted((root / "disp").glob("*.pfm")):
            left = _find_image(root / "left", disp.stem)
            right = _find_image(root / "right", disp.stem)
            if left is None or right is None:
                raise DataError(f"missing image pair for {disp.stem}")
            self.items.append((left, right, disp))
        if not self.items:
            raise DataError(f"no disparity maps under {root / 'disp'}")
        self.size = (run.data.height, run.data.width)

    def draw(self, index: int, rng) -> StereoSample:
        left, right, disp = self.items[int(rng.integers(len(self.items)))]
        try:
            L, R = to_gray(read_image(left)), to_gray(read_image(right))
            d, _ = read_pfm(disp)
        except (OSError, FormatError) as exc:
            raise DataError(str(exc)) from exc
        H, W = self.size
        if L.shape != d.shape or R.shape != d.shape or d.shape[0] < H or d.shape[1] < W:
            raise DataError(f"{disp.stem}: extents {d.shape} incompatible with crop {H}x{W}")
        y = int(rng.integers(d.shape[0] - H + 1))
        x = int(rng.integers(d.shape[1] - W + 1))
        sl = (slice(y, y + H), slice(x, x + W))
        d = d[sl]
        valid = np.isfinite(d) & (d >= 0)
        return StereoSample(L[sl], R[sl], np.where(valid, d, 0).astype(np.float32), valid)


def _find_image(folder: Path, stem: str):
    for ext in (".pgm", ".ppm"):
        p = folder / f"{stem}{ext}"
        if p.exists():
            return p
    return None


def make_source(run: RunConfig):
    return SyntheticSource(run) if run.data.source == "synthetic" else DirectorySource(run)


def ground_truth(samples: list[StereoSample]) -> GroundTruth:
    stack = lambda f: np.stack([getattr(s, f) for s in samples])[:, None]
    disp = stack("disparity").astype(np.float64)
    valid = stack("valid")
    if all(s.dx is not None for s in samples):
        return GroundTruth(disp, valid, stack("dx").astype(np.float64), stack("dy").astype(np.float64), stack("slope_valid") & valid)
    return GroundTruth.from_disparity(disp, valid)


@dataclass
class Batch:
    left: np.ndarray
    right: np.ndarray
    gt: GroundTruth


def make_batch(run: RunConfig, source, step: int) -> Batch:
    """Deterministic function of (train seed, step)."""
    bs = run.train.batch_size
    samples = []
    for k in range(bs):
        rng = np.random.default_rng([run.train.seed, step, k])
        s = source.draw(step * bs + k, rng)
        if run.data.augment:
            s = augment(s, int(rng.integers(2**31)), augment_options(run))
        samples.append(s)
    L = np.stack([to_gray(s.left) for s in samples])[:, None]
    R = np.stack([to_gray(s.right) for s in samples])[:, None]
    return Batch(L, R, ground_truth(samples))


# -- evaluation -------------------------------------------------------------------

def evaluate(store, cfg: ModelConfig, samples: list[StereoSample]) -> MetricReport:
    reports = []
    for s in samples:
        disp, _ = predict(store, cfg, to_gray(s.left)[None, None], to_gray(s.right)[None, None])
        reports.append(MetricReport.compute(disp[0, 0], s.disparity, s.valid))
    return MetricReport.pooled(reports)


def synthetic_samples(run: RunConfig, seeds) -> list[StereoSample]:
    return [gen_scene(scene_config(run, s)) for s in seeds]


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    store: object
    model: ModelConfig
    history: list[dict] = field(default_factory=list)
    validation: list[tuple[int, MetricReport]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def _grouped(terms: dict[str, float]) -> dict[str, float]:
    out = {"init": 0.0, "prop": 0.0, "slant": 0.0, "conf": 0.0}
    for k, v in terms.items():
        kind = k.rsplit(".", 1)[-1]
        out[kind] = out.get(kind, 0.0) + v
    return out


def train(run: RunConfig, log=None, quiet: bool = False) -> TrainResult:
    """Run the optimisation described by ``run``; writes checkpoints and a log to ``train.out_dir``."""
    run.validate()
    out_dir = Path(run.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run.save(out_dir / "run.cfg")
    cfg = model_config(run)
    store = build_model(cfg, seed=run.model.seed)
    loss_cfg = LossConfig.preset(run.train.loss)
    source = make_source(run)
    val = synthetic_samples(run, parse_seeds(run.data.val_seeds)) if run.train.val_every > 0 and run.data.source == "synthetic" else []
    boundaries = {s for s, _ in run.schedule}
    res = TrainResult(store, cfg)
    log_path = out_dir / "train.log"
    logf = open(log_path, "w")

    def emit(line):
        logf.write(line + "\n")
        logf.flush()
        if not quiet:
            print(line, file=log or sys.stdout, flush=True)

    def checkpoint(step):
        p = out_dir / f"model_{step:06d}.ckpt"
        save_checkpoint(store, p)
        res.checkpoints.append(p)

    def validate(step):
        if val:
            rep = evaluate(store, cfg, val)
            res.validation.append((step, rep))
            emit(f"val step={step} epe={rep.epe:.4f} bad1={rep.bad[1.0]:.2f}")

    steps = run.train.steps
    checkpoint(0)
    make = lambda step: make_batch(run, source, step)
    batches = SampleQueue(make, range(steps), maxsize=run.data.queue) if run.data.queue > 0 and steps else map(make, range(steps))
    try:
        for step, batch in enumerate(batches):
            lr = run.lr_at(step)
            with Tape() as tape:
                out = forward(store, cfg, batch.left, batch.right)
                terms = total_loss(out, batch.gt, loss_cfg, use_slant=cfg.predict_slant)
            total = float(terms.total.data)
            if not math.isfinite(total):
                raise NumericalAbort(step, terms.terms)
            try:
                backward(terms.total, tape)
            except NonFiniteError:
                raise NumericalAbort(step, terms.terms) from None
            adam_step(store, lr)
            g = _grouped(terms.terms)
            res.history.append({"step": step, "lr": lr, "loss": total, **g})
            emit(
                f"step={step} lr={lr:.3e} loss={total:.6f} "
                + " ".join(f"{k}={v:.6f}" for k, v in g.items())
            )
            done = step + 1
            if done % run.train.checkpoint_every == 0 or done in boundaries or done == steps:
                checkpoint(done)
            if run.train.val_every > 0 and (done % run.train.val_every == 0 or done == steps):
                validate(done)
    except NumericalAbort as exc:
        emit(exc.dump())
        raise
    finally:
        if isinstance(batches, SampleQueue):
            batches.close()
        logf.close()
    if steps:
        final = out_dir / "final.ckpt"
        final.write_bytes(res.checkpoints[-1].read_bytes())
        res.checkpoints.append(final)
    return res


def fronto_parallel(run: RunConfig) -> RunConfig:
    """The same run with slope prediction disabled."""
    return replace(run, model=replace(run.model, predict_slant=False))
