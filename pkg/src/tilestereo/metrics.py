"""Disparity evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BAD_THRESHOLDS = (0.5, 1.0, 2.0, 3.0)
SCENEFLOW_MAX_DISPARITY = 192.0


class EmptyMaskError(ValueError):
    pass


def _errors(pred, gt, mask) -> np.ndarray:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mask = np.ones(gt.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("no pixels to evaluate")
    return np.abs(pred - gt)[mask]


def epe(pred, gt, mask=None) -> float:
    """Mean absolute disparity error over the mask."""
    return float(_errors(pred, gt, mask).mean())


def bad_x(pred, gt, mask=None, x: float = 1.0) -> float:
    """Percentage of evaluated pixels with error strictly greater than x."""
    if x <= 0:
        raise ValueError("threshold must be positive")
    e = _errors(pred, gt, mask)
    return float(100.0 * np.count_nonzero(e > x) / e.size)


def sceneflow_mask(gt, valid=None) -> np.ndarray:
    """Valid pixels whose ground truth is at most 192."""
    gt = np.asarray(gt)
    ok = np.isfinite(gt) & (gt <= SCENEFLOW_MAX_DISPARITY)
    return ok if valid is None else ok & np.asarray(valid, bool)


@dataclass
class MetricReport:
    epe: float
    bad: dict[float, float] = field(default_factory=dict)
    valid_count: int = 0

    @classmethod
    def compute(cls, pred, gt, mask=None, thresholds=BAD_THRESHOLDS) -> "MetricReport":
        e = _errors(pred, gt, mask)
        return cls(float(e.mean()), {x: float(100.0 * np.count_nonzero(e > x) / e.size) for x in thresholds}, int(e.size))

    @classmethod
    def pooled(cls, reports: list["MetricReport"]) -> "MetricReport":
        """Aggregate weighted by valid-pixel count."""
        n = sum(r.valid_count for r in reports)
        if n == 0:
            raise EmptyMaskError("no pixels in any report")
        bad = {x: sum(r.bad[x] * r.valid_count for r in reports) / n for x in reports[0].bad}
        return cls(sum(r.epe * r.valid_count for r in reports) / n, bad, n)

    def lines(self) -> list[str]:
        """Machine-readable ``name=value`` lines."""
        out = [f"epe={self.epe:.6f}"]
        out += [f"bad_{x:g}={v:.4f}" for x, v in self.bad.items()]
        out.append(f"valid_count={self.valid_count}")
        return out

    def table(self, title: str = "") -> str:
        heads = ["EPE"] + [f"bad-{x:g}" for x in self.bad] + ["pixels"]
        vals = [f"{self.epe:.4f}"] + [f"{v:.2f}%" for v in self.bad.values()] + [str(self.valid_count)]
        w = [max(len(h), len(v)) for h, v in zip(heads, vals)]
        row = lambda cells: "  ".join(c.rjust(n) for c, n in zip(cells, w))
        text = row(heads) + "\n" + row(vals)
        return f"{title}\n{text}" if title else text
