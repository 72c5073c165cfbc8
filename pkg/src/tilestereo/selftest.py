"""Oracle suites run by ``tilestereo selftest``.

Each suite compares an optimised routine with an independent slow reference
and returns (passed, detail).
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, precision
from .autodiff.gradcheck import check_gradients


def dense_argmin_suite(trials: int = 50):
    from .tile_init import match_tiles

    rng = np.random.default_rng(0)
    for t in range(trials):
        eL = rng.random((1, 16, 16, 16)).astype(np.float32)
        eR = rng.random((1, 16, 16, 61)).astype(np.float32)
        d, _ = match_tiles(eL, eR, 32)
        vol = np.full((33, 16, 16), np.inf, dtype=np.float32)
        for x in range(16):
            for cand in range(min(32, 4 * x) + 1):
                vol[cand, :, x] = np.abs(eL[0, :, :, x] - eR[0, :, :, 4 * x - cand]).sum(axis=0)
        if not np.array_equal(d[0, 0], vol.argmin(axis=0)):
            return False, f"trial {t} differs"
    return True, f"{trials} trials"


def warp_suite(trials: int = 50):
    from .propagation import warp_cost

    rng = np.random.default_rng(1)
    worst = 0.0
    with precision(np.float64):
        for _ in range(trials):
            eL, eR = rng.normal(size=(1, 2, 3, 9)), rng.normal(size=(1, 2, 3, 9))
            disp = rng.uniform(-2, 11, size=(1, 1, 3, 9))
            got = warp_cost(Tensor(eL), Tensor(eR), Tensor(disp)).data
            ref = np.zeros_like(got)
            for y in range(3):
                for x in range(9):
                    u = min(max(x - disp[0, 0, y, x], 0.0), 8.0)
                    i = min(int(math.floor(u)), 7)
                    f = u - i
                    ref[0, 0, y, x] = np.abs(eL[0, :, y, x] - ((1 - f) * eR[0, :, y, i] + f * eR[0, :, y, i + 1])).sum()
            worst = max(worst, float(np.abs(got - ref).max()))
    return worst < 1e-6, f"max abs error {worst:.2e}"


def plane_algebra_suite(tiles: int = 1024):
    from .propagation import expand_map, upsample2x

    rng = np.random.default_rng(2)
    with precision(np.float64):
        # fixed examples, offsets written out by hand
        h = np.zeros((1, 16, 1, 1))
        h[0, :3, 0, 0] = (10.0, 1.0, 0.0)
        if not np.array_equal(expand_map(Tensor(h), 4).data[0, 0, 0], [8.5, 9.5, 10.5, 11.5]):
            return False, "expansion example failed"
        # random tiles: children reproduce the parent plane on their support
        n = int(math.ceil(math.sqrt(tiles)))
        h = np.zeros((1, 16, n, n))
        h[0, :3] = rng.uniform(-1, 1, (3, n, n)) * np.array([20, 0.5, 0.5])[:, None, None]
        child = expand_map(upsample2x(Tensor(h)), 4).data
        # independent evaluation of the parent plane at every finer-level pixel:
        # disparity doubles, slopes are unit-free, offsets (i - 3.5) are finer pixels
        ref = np.zeros_like(child)
        for ty in range(n):
            for tx in range(n):
                d, dx, dy = h[0, :3, ty, tx]
                for j in range(8):
                    for i in range(8):
                        ref[0, 0, 8 * ty + j, 8 * tx + i] = 2 * d + (i - 3.5) * dx + (j - 3.5) * dy
        err = float(np.abs(child - ref).max())
    return err < 1e-6, f"max abs error {err:.2e}"


def gradient_suite(seeds: int = 3):
    from .features import UNetConfig
    from .losses import GroundTruth, LossConfig, total_loss
    from .model import ModelConfig, build_model, forward
    from .propagation import UpdateSpec

    worst = 0.0
    with precision(np.float64):
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.normal(size=(1, 2, 5, 6)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
            fn = lambda: ad.sum(ad.leaky_relu(ad.conv2d(x, w, padding=1), 0.2) * Tensor(np.linspace(0, 1, 90).reshape(1, 3, 5, 6)))
            worst = max(worst, check_gradients(fn, [x, w], samples=10, rng=rng))

            cfg = ModelConfig(unet=UNetConfig((4, 4, 4)), max_disparity=8, pyramid=UpdateSpec(4, (1,)), refine=(UpdateSpec(4, (1,)),) * 3)
            store = build_model(cfg, seed)
            for name, p in store:
                if "head" in name:
                    p.data = rng.normal(scale=0.05, size=p.shape)
            L, R = rng.random((1, 1, 16, 16)), rng.random((1, 1, 16, 16))
            d = rng.uniform(0, 4, (1, 1, 16, 16))
            gt = GroundTruth(d, np.ones(d.shape, bool), np.zeros_like(d), np.zeros_like(d), np.ones(d.shape, bool))
            params = [store["unet.stem.conv3x3.weight"], store["refine1.head.weight"]]
            loss = lambda: total_loss(forward(store, cfg, L, R), gt, LossConfig(), use_slant=False, skip={"init0", "init1", "init2"}).total
            worst = max(worst, check_gradients(loss, params, samples=4, rng=rng, step=1e-6))
    return worst < 1e-3, f"max relative error {worst:.2e}"


def pfm_suite():
    from .data import read_pfm, write_pfm

    rng = np.random.default_rng(3)
    m = rng.normal(size=(13, 17)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        ok = True
        for little in (True, False):
            p = Path(tmp) / f"x{int(little)}.pfm"
            write_pfm(p, m, little_endian=little)
            ok &= read_pfm(p)[0].tobytes() == m.tobytes()
    return ok, "both byte orders"


SUITES = {
    "dense-argmin": dense_argmin_suite,
    "warp-oracle": warp_suite,
    "plane-algebra": plane_algebra_suite,
    "gradients": gradient_suite,
    "pfm-round-trip": pfm_suite,
}


def run_all(out=print) -> bool:
    ok = True
    for name, fn in SUITES.items():
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing suite counts as a failure
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'} {name:15s} {detail} ({time.perf_counter() - t0:.1f}s)")
    return ok
