from decimal import Decimal, getcontext

import numpy as np
import pytest

from tilestereo import autodiff as ad
from tilestereo.autodiff import Tape, Tensor, backward
from tilestereo.autodiff.gradcheck import check_gradients
from tilestereo.losses import (
    GroundTruth,
    LossConfig,
    conf_loss,
    downsample_gt,
    expand_full,
    fit_gt_plane,
    init_loss,
    lowest_nonmatch,
    prop_loss,
    robust_rho,
    robust_rho_value,
    slant_loss,
    subpixel_cost,
    total_loss,
)
from tilestereo.propagation import LevelOutput
from tilestereo.tile_init import InitResult, cost_at


def gt_of(d, valid=None, dx=None, dy=None, slope_valid=None):
    d = np.asarray(d, dtype=np.float64).reshape((1, 1) + np.shape(d)[-2:])
    z = np.zeros_like(d)
    valid = np.ones(d.shape, bool) if valid is None else np.asarray(valid).reshape(d.shape)
    sv = valid if slope_valid is None else np.asarray(slope_valid).reshape(d.shape)
    return GroundTruth(d, valid, z if dx is None else np.broadcast_to(dx, d.shape), z if dy is None else np.broadcast_to(dy, d.shape), sv)


def make_init(eL, eR, D):
    return InitResult(0, None, None, None, Tensor(eL), Tensor(eR), D)


# -- config ---------------------------------------------------------------------

def test_config_validation_and_presets():
    with pytest.raises(ValueError):
        LossConfig(beta=0)
    with pytest.raises(ValueError):
        LossConfig(c=0)
    with pytest.raises(ValueError):
        LossConfig(C1=2, C2=1.5)
    assert LossConfig.preset("sceneflow").alpha == 0.9
    g = LossConfig.preset("general")
    assert (g.alpha, g.c) == (0.8, 0.5)
    with pytest.raises(ValueError):
        LossConfig.preset("kitti")


# -- ground truth -----------------------------------------------------------------

def test_downsample_examples():
    vals, ok = downsample_gt(np.full((1, 1, 16, 16), 8.0), np.ones((1, 1, 16, 16), bool), 1)
    assert vals.shape == (1, 1, 2, 2) and np.all(vals == 4) and ok.all()
    d = np.full((1, 1, 4, 4), 3.0)
    d[0, 0, 1, 2] = 7.0
    vals, _ = downsample_gt(d, np.ones_like(d, bool), 0)
    assert vals.item() == 7.0
    vals, ok = downsample_gt(d, np.zeros_like(d, bool), 0)
    assert not ok.any()


def test_downsample_ignores_invalid():
    d = np.full((1, 1, 4, 4), 3.0)
    d[0, 0, 0, 0] = 90.0
    v = np.ones_like(d, bool)
    v[0, 0, 0, 0] = False
    assert downsample_gt(d, v, 0)[0].item() == 3.0


def plane_field(a, sx, sy, H=20, W=24):
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    return a + sx * u + sy * v


def test_plane_fit_exact():
    d = plane_field(2, 0.5, -0.25)
    dx, dy, ok = fit_gt_plane(d, np.ones_like(d, bool))
    assert ok.all()
    np.testing.assert_allclose(dx, 0.5, atol=1e-6)
    np.testing.assert_allclose(dy, -0.25, atol=1e-6)


def test_plane_fit_constant():
    d = np.full((12, 12), 4.0)
    dx, dy, ok = fit_gt_plane(d, np.ones_like(d, bool))
    assert ok.all() and np.abs(dx).max() < 1e-9 and np.abs(dy).max() < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_plane_fit_robust_to_outliers(seed):
    rng = np.random.default_rng(seed)
    d = plane_field(10, 0.3, 0.1, 40, 40)
    bad = rng.random(d.shape) < 0.1
    dx, dy, ok = fit_gt_plane(d + bad * 50.0, np.ones_like(d, bool))
    inner = (slice(4, -4), slice(4, -4))
    assert ok[inner].all()
    err = np.maximum(np.abs(dx - 0.3), np.abs(dy - 0.1))[inner]
    # Huber weights bound but do not remove outlier influence; windows with
    # clustered outliers keep a small bias, so judge the bulk of the pixels
    assert np.median(err) < 0.05
    assert (err < 0.05).mean() > 0.9
    # an unweighted fit is far worse
    dx_ls, _, _ = fit_gt_plane(d + bad * 50.0, np.ones_like(d, bool), rounds=0)
    assert np.median(np.abs(dx_ls - 0.3)[inner]) > 2 * np.median(err)


def test_plane_fit_needs_samples_and_conditioning():
    d = plane_field(1, 0.2, 0.2, 12, 12)
    valid = np.zeros_like(d, bool)
    valid[::3, ::3] = True  # at most 9 samples in any window
    assert not fit_gt_plane(d, valid)[2].any()
    line = np.zeros_like(d, bool)
    line[6, :] = True  # collinear samples leave dy undetermined
    assert not fit_gt_plane(d, line)[2].any()


def test_ground_truth_from_disparity():
    d = plane_field(5, 0.1, -0.2, 16, 16)[None, None]
    gt = GroundTruth.from_disparity(d, np.ones_like(d, bool))
    np.testing.assert_allclose(gt.dx, 0.1, atol=1e-6)
    assert gt.slope_valid.all()


# -- initialisation loss ------------------------------------------------------------

def test_subpixel_examples():
    costs = {1: 4.0, 2: 2.0, 3: 9.0}
    assert subpixel_cost(costs.__getitem__, 1.5) == 3.0
    assert subpixel_cost(costs.__getitem__, 2.0) == 2.0
    # an integer argument never touches the next entry
    assert subpixel_cost({3: 1.0}.__getitem__, 3.0) == 1.0


def single_tile_pair(costs):
    """Embeddings of one tile whose cost at disparity d is costs[d] exactly (1 channel)."""
    D = len(costs) - 1
    w = D // 4 + 1
    x = w - 1
    eL = np.zeros((1, 1, 1, w))
    eR = np.zeros((1, 1, 1, 4 * (w - 1) + 1))
    for d, c in enumerate(costs):
        eR[0, 0, 0, 4 * x - d] = c
    return eL, eR, x


def test_init_loss_examples(f64):
    costs = np.full(9, 5.0)
    costs[2], costs[6] = 0.2, 0.3
    eL, eR, x = single_tile_pair(costs)
    gt = np.zeros((1, 1, 1, eL.shape[-1]))
    gt[..., x] = 2.0
    use = np.zeros(gt.shape, bool)
    use[..., x] = True
    loss = init_loss(make_init(eL, eR, 8), gt, use, beta=1.0)
    assert float(loss.data) == pytest.approx(0.2 + 0.7)

    costs2 = np.full(9, 1.5)
    costs2[2] = 0.0
    eL, eR, x = single_tile_pair(costs2)
    assert float(init_loss(make_init(eL, eR, 8), gt, use).data) == pytest.approx(0.0)


def test_init_loss_subpixel_gt(f64):
    costs = np.full(9, 5.0)
    costs[3], costs[4] = 1.0, 3.0
    eL, eR, x = single_tile_pair(costs)
    gt = np.full((1, 1, 1, eL.shape[-1]), 3.25)
    use = np.zeros(gt.shape, bool)
    use[..., x] = True
    # psi(3.25) = 0.25*3 + 0.75*1; every non-match costs 5 so the hinge is inactive
    assert float(init_loss(make_init(eL, eR, 8), gt, use).data) == pytest.approx(1.5)


def test_init_loss_excludes_out_of_range(f64):
    eL, eR, x = single_tile_pair(np.ones(9))
    gt = np.full((1, 1, 1, eL.shape[-1]), 50.0)
    assert init_loss(make_init(eL, eR, 8), gt, np.ones(gt.shape, bool)) is None


def brute_nonmatch(eL, eR, gt, D):
    B, C, h, w = eL.shape
    out = np.zeros((B, 1, h, w), int)
    found = np.zeros((B, 1, h, w), bool)
    for b in range(B):
        for y in range(h):
            for x in range(w):
                best = np.inf
                for d in range(D + 1):
                    if 4 * x - d < 0 or abs(d - gt[b, 0, y, x]) <= 1.5:
                        continue
                    c = np.abs(eL[b, :, y, x] - eR[b, :, y, 4 * x - d]).sum()
                    if c < best:
                        best, out[b, 0, y, x], found[b, 0, y, x] = c, d, True
    return out, found


@pytest.mark.parametrize("trial", range(10))
def test_lowest_nonmatch_brute_force(trial):
    rng = np.random.default_rng(trial)
    eL, eR = rng.random((1, 4, 3, 6)), rng.random((1, 4, 3, 21))
    gt = rng.uniform(0, 12, (1, 1, 3, 6))
    d, found = lowest_nonmatch(eL, eR, gt, 12)
    bd, bf = brute_nonmatch(eL, eR, gt, 12)
    assert np.array_equal(found, bf)
    assert np.array_equal(d[found], bd[bf])


def test_init_loss_matches_brute_force_oracle(f64):
    rng = np.random.default_rng(7)
    eL, eR = rng.random((1, 3, 2, 5)), rng.random((1, 3, 2, 17))
    gt = rng.uniform(0, 10, (1, 1, 2, 5))
    D = 10
    use = gt <= np.minimum(D, 4 * np.arange(5))
    got = float(init_loss(make_init(eL, eR, D), gt, np.ones_like(gt, bool)).data)
    d_nm, found = brute_nonmatch(eL, eR, gt, D)
    total = 0.0
    for y in range(2):
        for x in range(5):
            if not use[0, 0, y, x]:
                continue
            rho = lambda d: np.abs(eL[0, :, y, x] - eR[0, :, y, 4 * x - d]).sum()
            g = gt[0, 0, y, x]
            lo = int(np.floor(g))
            psi = (g - lo) * (rho(lo + 1) if g > lo else 0.0) + (lo + 1 - g) * rho(lo)
            if found[0, 0, y, x]:
                psi += max(1.0 - rho(d_nm[0, 0, y, x]), 0.0)
            total += psi
    assert got == pytest.approx(total / use.sum(), rel=1e-10)


def test_init_loss_gradient(f64):
    rng = np.random.default_rng(3)
    eL = Tensor(rng.random((1, 3, 2, 4)), requires_grad=True)
    eR = Tensor(rng.random((1, 3, 2, 13)), requires_grad=True)
    gt = rng.uniform(0.2, 8, (1, 1, 2, 4))
    gt = np.floor(gt) + 0.37  # away from integer kinks of psi
    init = InitResult(0, None, None, None, eL, eR, 8)
    fn = lambda: init_loss(init, gt, np.ones_like(gt, bool))
    assert check_gradients(fn, [eL, eR]) < 1e-4


def test_init_loss_locality(f64):
    rng = np.random.default_rng(11)
    eL, eR, x = single_tile_pair(rng.uniform(0.1, 3.0, 13))
    gt = np.full((1, 1, 1, eL.shape[-1]), 4.6)
    use = np.zeros(gt.shape, bool)
    use[..., x] = True
    d_nm, _ = lowest_nonmatch(eL, eR, gt, 12)
    base = float(init_loss(make_init(eL, eR, 12), gt, use).data)
    touched = {4, 5, int(d_nm[..., x].item())}
    for d in range(13):
        if d in touched:
            continue
        eR2 = eR.copy()
        eR2[0, 0, 0, 4 * x - d] += 10.0  # only raise costs so d_nm cannot move
        assert float(init_loss(make_init(eL, eR2, 12), gt, use).data) == base


# -- robust loss ----------------------------------------------------------------

def test_rho_zero_and_monotone():
    for a, c in [(0.9, 0.1), (0.8, 0.5), (-1.0, 1.0), (3.0, 0.2)]:
        assert robust_rho_value(0.0, a, c) == 0.0
        vals = robust_rho_value(np.linspace(0, 20, 2001), a, c)
        assert np.all(np.diff(vals) >= 0)
    with pytest.raises(ValueError):
        robust_rho_value(1.0, 2.0, 1.0)


def test_rho_high_precision():
    getcontext().prec = 50
    x, a, c = Decimal(1), Decimal("0.9"), Decimal("0.1")
    b = abs(a - 2)
    ref = (b / a) * (((x / c) ** 2 / b + 1) ** (a / 2) - 1)
    assert robust_rho_value(1.0, 0.9, 0.1) == pytest.approx(float(ref), rel=1e-12)


def test_rho_gradient(f64):
    x = Tensor(np.linspace(0.05, 3.0, 9), requires_grad=True)
    assert check_gradients(lambda: ad.sum(robust_rho(x, 0.9, 0.1)), [x]) < 1e-6


# -- propagation losses -----------------------------------------------------------

def test_prop_loss_examples(f64):
    gt = gt_of(np.full((4, 4), 7.0))
    loss, diff = prop_loss(Tensor(np.full((1, 1, 4, 4), 7.0)), gt, 1.0, 0.9, 0.1)
    assert float(loss.data) == 0 and not diff.any()
    loss, _ = prop_loss(Tensor(np.full((1, 1, 4, 4), 2.0)), gt, 1.0, 0.9, 0.1)
    assert float(loss.data) == pytest.approx(robust_rho_value(1.0, 0.9, 0.1))
    loss, _ = prop_loss(Tensor(np.full((1, 1, 4, 4), 2.0)), gt, float("inf"), 0.9, 0.1)
    assert float(loss.data) == pytest.approx(robust_rho_value(5.0, 0.9, 0.1))


def test_prop_loss_naive_oracle(f64):
    rng = np.random.default_rng(5)
    d = rng.uniform(0, 20, (6, 7))
    valid = rng.random((6, 7)) > 0.3
    pred = d + rng.normal(scale=2, size=d.shape)
    loss, _ = prop_loss(Tensor(pred[None, None]), gt_of(d, valid), 1.0, 0.9, 0.1)
    ref = [robust_rho_value(min(abs(d[i, j] - pred[i, j]), 1.0), 0.9, 0.1) for i, j in zip(*np.nonzero(valid))]
    assert float(loss.data) == pytest.approx(np.mean(ref), rel=1e-12)


def test_prop_loss_zero_at_generating_plane(f64):
    from tilestereo.data import SceneConfig, gen_scene

    s = gen_scene(SceneConfig(64, 64, num_segments=0, seed=3))
    # a background-only scene is one plane: recover it from three pixels
    d = s.disparity.astype(np.float64)
    p1, p2 = s.dx[0, 0], s.dy[0, 0]
    p0 = d[0, 0]
    T = 4
    gh = gw = 16
    cy = (np.arange(gh) * T + (T - 1) / 2.0)[:, None]
    cx = (np.arange(gw) * T + (T - 1) / 2.0)[None, :]
    h = np.zeros((1, 16, gh, gw))
    h[0, 0] = p0 + p1 * cx + p2 * cy
    h[0, 1], h[0, 2] = p1, p2
    out = LevelOutput("x", Tensor(h), Tensor(np.zeros((1, 1, gh, gw))), 1, T, 1.0)
    gt = GroundTruth(d[None, None], s.valid[None, None], s.dx[None, None].astype(float), s.dy[None, None].astype(float), s.slope_valid[None, None])
    lp, diff = prop_loss(expand_full(out), gt, 1.0, 0.9, 0.1)
    assert abs(float(lp.data)) < 1e-9
    ls = slant_loss(expand_full(out, 1), expand_full(out, 2), gt, diff, 1.0)
    assert abs(float(ls.data)) < 1e-6


def test_slant_examples(f64):
    z = Tensor(np.zeros((1, 1, 2, 2)))
    gt = gt_of(np.zeros((2, 2)), dx=0.5, dy=-0.25)
    assert float(slant_loss(z, z, gt, np.zeros((1, 1, 2, 2)), 1.0).data) == pytest.approx(0.75)
    assert float(slant_loss(z, z, gt, np.full((1, 1, 2, 2), 2.0), 1.0).data) == 0.0
    perfect = slant_loss(Tensor(np.full((1, 1, 2, 2), 0.5)), Tensor(np.full((1, 1, 2, 2), -0.25)), gt, np.zeros((1, 1, 2, 2)), 1.0)
    assert float(perfect.data) == 0.0
    no_slopes = gt_of(np.zeros((2, 2)), slope_valid=np.zeros((2, 2), bool))
    assert slant_loss(z, z, no_slopes, np.zeros((1, 1, 2, 2)), 1.0) is None


def test_conf_examples():
    v = np.ones((1, 1, 1, 1), bool)
    w = lambda x: Tensor(np.full((1, 1, 1, 1), x))
    d = lambda x: np.full((1, 1, 1, 1), x)
    assert float(conf_loss(w(0.5), d(0.5), v, 1, 1.5).data) == pytest.approx(0.5)
    assert float(conf_loss(w(-0.2), d(0.0), v, 1, 1.5).data) == pytest.approx(1.2)
    for x in (-3.0, 0.0, 0.4, 7.0):
        assert float(conf_loss(w(x), d(1.2), v, 1, 1.5).data) == 0.0
    assert float(conf_loss(w(0.8), d(4.0), v, 1, 1.5).data) == pytest.approx(0.8)


def test_conf_gradient_piecewise(f64):
    rng = np.random.default_rng(2)
    wv = rng.uniform(-2, 2, (1, 1, 8, 8))
    wv[np.abs(wv) < 0.05] = 0.3
    wv[np.abs(wv - 1) < 0.05] = 0.5
    diff = rng.uniform(-3, 3, (1, 1, 8, 8))
    w = Tensor(wv, requires_grad=True)
    valid = np.ones(wv.shape, bool)
    with Tape() as tape:
        loss = conf_loss(w, diff, valid, 1.0, 1.5)
    backward(loss, tape)
    a = np.abs(diff)
    expect = (-1.0 * (a < 1) * (wv < 1) + 1.0 * (a > 1.5) * (wv > 0)) / wv.size
    np.testing.assert_allclose(w.grad, expect, atol=1e-12)


# -- total loss ---------------------------------------------------------------------

def tiny_model():
    from tilestereo.features import UNetConfig
    from tilestereo.model import ModelConfig, build_model
    from tilestereo.propagation import UpdateSpec

    cfg = ModelConfig(
        unet=UNetConfig((8, 8, 8)),
        max_disparity=16,
        pyramid=UpdateSpec(8, (1,)),
        refine=(UpdateSpec(8, (1,)),) * 3,
    )
    return cfg, build_model(cfg, seed=1)


def scene_batch():
    from tilestereo.data import SceneConfig, gen_scene

    s = gen_scene(SceneConfig(64, 64, num_segments=2, d_max=12, seed=4))
    gt = GroundTruth(
        s.disparity[None, None].astype(float), s.valid[None, None], s.dx[None, None].astype(float),
        s.dy[None, None].astype(float), s.slope_valid[None, None],
    )
    # 32x64 crop keeps the test cheap while leaving 3 feature levels
    sl = (slice(None), slice(None), slice(0, 32), slice(0, 64))
    gt = GroundTruth(*(getattr(gt, f)[sl] for f in ("disparity", "valid", "dx", "dy", "slope_valid")))
    return s.left[None, None, :32], s.right[None, None, :32], gt


def test_total_loss_terms_and_removal():
    from tilestereo.model import forward

    cfg, store = tiny_model()
    L, R, gt = scene_batch()
    for _, p in store:
        if p.data.ndim == 4 and "head" in _:
            p.data[:] = np.random.default_rng(0).normal(scale=0.05, size=p.shape)
    res = forward(store, cfg, L, R)
    terms = total_loss(res, gt, LossConfig())
    assert all(v >= 0 for v in terms.terms.values())
    assert float(terms.total.data) == pytest.approx(sum(terms.terms.values()), rel=1e-5)
    assert {"init0.init", "prop2.h0.prop", "prop1.h1.conf", "refine1.prop"} <= set(terms.terms)
    positive = [k.split(".")[0] for k, v in terms.terms.items() if k.startswith("init") and v > 0]
    less = total_loss(res, gt, LossConfig(), skip={positive[0]})
    assert float(less.total.data) < float(terms.total.data)
    no_slant = total_loss(res, gt, LossConfig(), use_slant=False)
    assert not any(k.endswith(".slant") for k in no_slant.terms)


def test_total_loss_all_zero():
    res = type("R", (), {"init": [], "prop": type("P", (), {"outputs": []})()})()
    assert float(total_loss(res, gt_of(np.zeros((2, 2))), LossConfig()).total.data) == 0.0


def test_total_loss_gradient_sampled(f64):
    from tilestereo.model import forward

    cfg, store = tiny_model()
    L, R, gt = scene_batch()
    rng = np.random.default_rng(9)
    for name, p in store:
        if "head" in name:
            p.data[:] = rng.normal(scale=0.05, size=p.shape)
    L, R = L[..., :16, :32], R[..., :16, :32]
    gt = GroundTruth(*(getattr(gt, f)[..., :16, :32] for f in ("disparity", "valid", "dx", "dy", "slope_valid")))
    params = [store["unet.stem.conv3x3.weight"], store["refine1.head.weight"], store["prop2.reduce.weight"]]
    # conf and truncation kinks are piecewise; only smooth pieces are checked
    fn = lambda: total_loss(forward(store, cfg, L, R), gt, LossConfig(), use_slant=False, skip={"init0", "init1", "init2"}).total
    err = check_gradients(fn, params, samples=7, step=1e-6)
    assert err < 1e-4
