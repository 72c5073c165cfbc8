"""Command-line entry points: train, infer, eval, selftest.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical abort (non-finite loss or a failed self-test).
The BLAS thread count is taken from ``TILESTEREO_THREADS`` when set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- infer ------------------------------------------------------------------------

_PALETTE = np.array(
    [[0.0, 0.0, 0.5], [0.0, 0.3, 1.0], [0.0, 0.9, 0.9], [0.5, 1.0, 0.3], [1.0, 0.9, 0.0], [1.0, 0.3, 0.0], [0.5, 0.0, 0.0]]
)


def colorize(disp: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Map disparity to an RGB image in [0, 1] (far = blue, near = red)."""
    vmax = float(np.nanmax(disp)) if vmax is None else vmax
    t = np.clip(np.nan_to_num(disp) / max(vmax, 1e-6), 0, 1) * (len(_PALETTE) - 1)
    knots = np.arange(len(_PALETTE))
    return np.stack([np.interp(t, knots, _PALETTE[:, c]) for c in range(3)], axis=-1)


def load_model(ckpt, config=None, overrides=()):
    """Model config from ``config`` (or the run.cfg beside the checkpoint), then the weights."""
    from .autodiff import load_checkpoint
    from .config import load_config
    from .model import build_model
    from .train import model_config

    ckpt = Path(ckpt)
    if config is None and (ckpt.parent / "run.cfg").exists():
        config = ckpt.parent / "run.cfg"
    run = load_config(config, overrides)
    cfg = model_config(run)
    store = build_model(cfg, seed=run.model.seed)
    load_checkpoint(store, ckpt)
    return store, cfg


def cmd_infer(args) -> int:
    from .data import read_image, write_image, write_pfm
    from .model import predict
    from .train import to_gray

    store, cfg = load_model(args.model, args.config, args.override)
    L, R = to_gray(read_image(args.left)), to_gray(read_image(args.right))
    if L.shape != R.shape:
        raise ValueError(f"left {L.shape} and right {R.shape} differ in extent")
    disp, slopes = predict(store, cfg, L[None, None], R[None, None])
    write_pfm(args.out, disp[0, 0])
    if args.viz:
        write_image(args.viz, colorize(disp[0, 0], cfg.max_disparity))
    if args.slopes:
        write_pfm(f"{args.slopes}_dx.pfm", slopes[0, 0])
        write_pfm(f"{args.slopes}_dy.pfm", slopes[0, 1])
    print(f"wrote {args.out} ({disp.shape[-2]}x{disp.shape[-1]})")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------

def evaluate_dirs(pred_dir, gt_dir, protocol: str = "all"):
    """Per-file and pooled reports for matching PFM stems; non-finite gt marks invalid pixels."""
    from .data import read_pfm
    from .metrics import MetricReport, sceneflow_mask
    from .train import DataError

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in pred_dir.glob("*.pfm")}
    gts = {p.stem: p for p in gt_dir.glob("*.pfm")}
    if not gts:
        raise DataError(f"no ground-truth PFM files in {gt_dir}")
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise DataError(f"unmatched files: {', '.join(missing[:5])}")
    per_file = {}
    for stem in sorted(gts):
        gt, _ = read_pfm(gts[stem])
        pred, _ = read_pfm(preds[stem])
        valid = np.isfinite(gt)
        mask = sceneflow_mask(gt, valid) if protocol == "sceneflow" else valid
        per_file[stem] = MetricReport.compute(pred, np.where(valid, gt, 0), mask)
    return per_file, MetricReport.pooled(list(per_file.values()))


def cmd_eval(args) -> int:
    per_file, pooled = evaluate_dirs(args.pred, args.gt, args.protocol)
    for stem, rep in per_file.items():
        print(f"file={stem} " + " ".join(rep.lines()))
    print(pooled.table(f"pooled over {len(per_file)} files ({args.protocol})"))
    for line in pooled.lines():
        print(line)
    return EXIT_OK


# -- train / selftest -------------------------------------------------------------------

def cmd_train(args) -> int:
    from .config import load_config
    from .train import train

    run = load_config(args.config, args.override)
    res = train(run)
    print(f"final checkpoint {res.checkpoints[-1]}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    return EXIT_OK if run_all() else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tilestereo", description="Tile-hypothesis stereo: train, infer, evaluate.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train a model from a key=value config")
    t.add_argument("--config", help="config file (see tilestereo.config for keys)")
    t.add_argument("--override", action="append", default=[], metavar="K=V")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="predict a disparity map for one image pair")
    i.add_argument("--left", required=True)
    i.add_argument("--right", required=True)
    i.add_argument("--model", required=True, help="checkpoint file")
    i.add_argument("--out", required=True, help="output PFM")
    i.add_argument("--config", help="run config; defaults to run.cfg next to the checkpoint")
    i.add_argument("--override", action="append", default=[], metavar="K=V")
    i.add_argument("--viz", help="optional color-mapped PPM")
    i.add_argument("--slopes", help="optional prefix for <prefix>_dx.pfm and <prefix>_dy.pfm")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="score predicted PFMs against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--protocol", choices=("all", "sceneflow"), default="all")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("selftest", help="run the oracle suites")
    s.set_defaults(fn=cmd_selftest)
    return p


def _thread_limit():
    n = os.environ.get("TILESTEREO_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None) -> int:
    from .autodiff import CheckpointError
    from .config import ConfigError
    from .data import FormatError
    from .train import DataError, NumericalAbort

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    limit = _thread_limit()
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(exc.dump(), file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if limit is not None:
            limit.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
