import numpy as np
import pytest

from tilestereo.autodiff import (
    ParameterStore,
    Tape,
    TapeError,
    Tensor,
    adam_step,
    backward,
    conv2d,
    leaky_relu,
    masked_maxpool2d,
    maxpool2d,
    sample_linear_x,
    transposed_conv2d,
)
from tilestereo.autodiff import ops
from tilestereo.autodiff.gradcheck import check_gradients


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=float), requires_grad=grad)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = t(rng.normal(size=(2, 1, 5, 6)))
        y = conv2d(x, t(np.ones((1, 1, 1, 1))), t(np.zeros(1)))
        np.testing.assert_array_equal(y.data, x.data)

    def test_counting_taps(self):
        x = t(np.full((1, 1, 4, 4), 5.0))
        y = conv2d(x, t(np.ones((1, 1, 3, 3))), t([0.0]), padding=1).data[0, 0]
        assert y[1:3, 1:3].tolist() == [[45, 45], [45, 45]]
        assert y[0, 0] == y[0, 3] == y[3, 0] == y[3, 3] == 20
        assert y[0, 1] == 30

    @pytest.mark.parametrize(
        "H,W,k,stride,dil,pad",
        [(7, 9, 3, 1, 1, 0), (8, 8, 2, 2, 1, 0), (9, 7, 3, 2, 2, (1, 2, 0, 3)), (16, 5, 4, (4, 1), 1, 0)],
    )
    def test_output_extent(self, H, W, k, stride, dil, pad):
        from tilestereo.autodiff.conv import _padding, _pair

        sh, sw = _pair(stride)
        pt, pb, pl, pr = _padding(pad)
        y = conv2d(t(np.zeros((1, 2, H, W))), t(np.zeros((3, 2, k, k))), stride=stride, dilation=dil, padding=pad)
        assert y.shape == (1, 3, (H + pt + pb - dil * (k - 1) - 1) // sh + 1, (W + pl + pr - dil * (k - 1) - 1) // sw + 1)

    def test_errors(self):
        with pytest.raises(ValueError):
            conv2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError):
            conv2d(t(np.zeros((1, 1, 4, 4))), t(np.zeros((1, 1, 3, 3))), stride=0)
        with pytest.raises(ValueError):
            conv2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 3))))

    def test_gradient_spec_case(self, f64, rng):
        x = t(rng.normal(size=(2, 3, 5, 5)))
        w = t(rng.normal(size=(4, 3, 3, 3)))
        b = t(rng.normal(size=4))
        err = check_gradients(lambda: conv2d(x, w, b, padding=1), [x, w, b])
        assert err < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_seeds(self, f64, seed):
        r = np.random.default_rng(seed)
        x = t(r.normal(size=(1, 2, 7, 6)))
        w = t(r.normal(size=(3, 2, 3, 3)))
        b = t(r.normal(size=3))
        fn = lambda: conv2d(x, w, b, stride=(1, 2), dilation=2, padding=(2, 1, 0, 2))
        assert check_gradients(fn, [x, w, b]) < 1e-3

    def test_linearity(self, rng):
        w = t(rng.normal(size=(3, 2, 3, 3)))
        x1, x2 = rng.normal(size=(2, 1, 2, 6, 6))
        a, c = 1.7, -0.4
        lhs = conv2d(t(a * x1 + c * x2), w, padding=1).data
        rhs = a * conv2d(t(x1), w, padding=1).data + c * conv2d(t(x2), w, padding=1).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)


class TestTransposedConv:
    def test_single_tap(self):
        y = transposed_conv2d(t([[[[3.0]]]]), t(np.ones((1, 1, 2, 2))), t([0.0]), stride=2)
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), 3.0))

    def test_extent(self):
        y = transposed_conv2d(t(np.zeros((2, 3, 5, 4))), t(np.zeros((3, 6, 3, 3))), stride=2)
        assert y.shape == (2, 6, 11, 9)

    @pytest.mark.parametrize("k,s", [(2, 2), (3, 2), (3, 1), (4, 3)])
    def test_adjoint_identity(self, f64, rng, k, s):
        x = rng.normal(size=(2, 3, 4 * s + k, 3 * s + k + 1))
        w = rng.normal(size=(5, 3, k, k))
        cx = conv2d(t(x), t(w), stride=s).data
        y = rng.normal(size=cx.shape)
        tx = transposed_conv2d(t(y), t(w), stride=s).data
        # transposed output may be narrower than x when the stride leaves a remainder
        lhs = np.sum(cx * y)
        rhs = np.sum(x[:, :, : tx.shape[2], : tx.shape[3]] * tx)
        assert abs(lhs - rhs) <= 1e-6 * abs(lhs)

    def test_gradient(self, f64, rng):
        x = t(rng.normal(size=(2, 3, 3, 4)))
        w = t(rng.normal(size=(3, 2, 2, 2)))
        b = t(rng.normal(size=2))
        assert check_gradients(lambda: transposed_conv2d(x, w, b, stride=2) * transposed_conv2d(x, w, b, stride=2), [x, w, b]) < 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            transposed_conv2d(t(np.zeros((1, 2, 2, 2))), t(np.zeros((3, 1, 2, 2))))


class TestLeakyRelu:
    def test_values(self):
        np.testing.assert_allclose(leaky_relu(t([-1.0, 0.0, 2.0]), 0.2).data, [-0.2, 0.0, 2.0])

    def test_identity_on_positives(self, rng):
        x = np.abs(rng.normal(size=20)).astype(np.float32)
        for slope in (0.0, 0.2, 0.7):
            np.testing.assert_array_equal(leaky_relu(t(x), slope).data, x)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient(self, f64, seed):
        x = t(np.random.default_rng(seed).normal(size=(3, 4)))
        fn = lambda: leaky_relu(x, 0.2) * leaky_relu(x, 0.2)
        err = check_gradients(fn, [x], skip=lambda k, idx: abs(x.data[idx]) < 1e-3)
        assert err < 1e-3

    def test_kink_takes_positive_branch(self):
        x = t([0.0], grad=True)
        with Tape() as tape:
            y = ops.sum(leaky_relu(x, 0.2))
        backward(y, tape)
        assert x.grad.tolist() == [1.0]


class TestSampleLinearX:
    def test_midpoint(self):
        feat = t([[[[0.0, 10.0, 20.0]]]])
        assert sample_linear_x(feat, t([[[[0.5]]]])).data.item() == 5.0

    def test_integer_gather(self, rng):
        feat = rng.normal(size=(1, 3, 2, 6)).astype(np.float32)
        cols = np.array([[4, 0, 5], [2, 2, 1]], dtype=float)
        out = sample_linear_x(t(feat), t(cols[None, None])).data
        for h in range(2):
            np.testing.assert_array_equal(out[0, :, h], feat[0, :, h, cols[h].astype(int)].T)

    def test_clamps(self):
        feat = t([[[[1.0, 2.0, 3.0]]]])
        out = sample_linear_x(feat, t([[[[-4.0, 9.0]]]])).data
        assert out.ravel().tolist() == [1.0, 3.0]

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient(self, f64, seed):
        r = np.random.default_rng(seed)
        feat = t(r.normal(size=(2, 3, 2, 7)))
        c = r.uniform(0.1, 5.9, size=(2, 1, 2, 5))
        c = np.where(np.abs(c - np.round(c)) < 1e-2, c + 0.05, c)
        coords = t(c)
        fn = lambda: sample_linear_x(feat, coords) * sample_linear_x(feat, coords)
        err = check_gradients(fn, [feat, coords])
        assert err < 1e-5


class TestMaxPool:
    def test_basic(self):
        assert maxpool2d(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2).data.item() == 4.0

    def test_constant(self):
        out = maxpool2d(t(np.full((1, 2, 6, 4), 7.0)), 2, 2).data
        assert out.shape == (1, 2, 3, 2) and np.all(out == 7.0)

    def test_masked_vacuous_window(self):
        x = np.array([[1.0, 2.0, 5.0, 1.0], [3.0, 4.0, 0.0, 9.0]])
        valid = np.array([[0, 0, 1, 0], [0, 0, 1, 0]], bool)
        vals, ok = masked_maxpool2d(x, valid, 2)
        assert ok.tolist() == [[False, True]]
        assert vals[0, 1] == 5.0

    def test_gradient(self, f64, rng):
        x = t(rng.permutation(36).reshape(1, 1, 6, 6).astype(float))
        assert check_gradients(lambda: maxpool2d(x, 2) * maxpool2d(x, 2), [x]) < 1e-6


class TestBackward:
    def test_sum(self):
        x = t([1.0, 2.0, 3.0], grad=True)
        with Tape() as tape:
            loss = ops.sum(x)
        backward(loss, tape)
        assert x.grad.tolist() == [1, 1, 1]

    def test_square(self):
        x = t([1.0, 2.0], grad=True)
        with Tape() as tape:
            loss = ops.sum(x * x)
        backward(loss, tape)
        assert x.grad.tolist() == [2.0, 4.0]

    def test_fan_out_accumulates(self):
        x = t([3.0], grad=True)
        with Tape() as tape:
            y = x * 2.0
            loss = ops.sum(y + y * y)
        backward(loss, tape)
        assert x.grad.tolist() == [2.0 + 8.0 * 3.0]

    def test_tape_consumed(self):
        x = t([1.0], grad=True)
        with Tape() as tape:
            loss = ops.sum(x)
        backward(loss, tape)
        with pytest.raises(TapeError):
            backward(loss, tape)

    def test_non_scalar(self):
        x = t([1.0, 2.0], grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError):
            backward(y, tape)

    def test_no_recording_outside_tape(self):
        x = t([1.0], grad=True)
        y = x * 2.0
        assert not y.requires_grad

    @pytest.mark.parametrize("seed", range(10))
    def test_shape_ops_gradient(self, f64, seed):
        r = np.random.default_rng(seed)
        a = t(r.normal(size=(2, 1, 8, 8)))
        b = t(r.normal(size=(1, 16, 1, 1)))

        def fn():
            s2d = ops.space_to_depth(a, 4)
            up = ops.upsample_nearest(s2d, 2)
            c = ops.concat([up, (up + b) * (up + b)], axis=1)
            return c * ops.transpose(c, (0, 1, 3, 2))[:, :, :, ::-1]

        assert check_gradients(fn, [a, b]) < 1e-3


def test_clamp_and_abs_gradients(f64):
    x = t([-2.0, -0.3, 0.4, 1.5])
    fn = lambda: ops.clamp_min(x, -1.0) * ops.abs(x) + ops.clamp_max(x, 1.0)
    assert check_gradients(fn, [x]) < 1e-6


def test_gradcheck_refines_across_a_kink(f64):
    # |x - 0.5| with x just past the kink: a step of 1e-5 straddles it
    x = t([0.5 + 3e-7])
    fn = lambda: ops.abs(x - 0.5)
    assert check_gradients(fn, [x], step=1e-5) > 0.5
    assert check_gradients(fn, [x], step=1e-5, refine=3) < 1e-6


def test_gradcheck_refinement_keeps_smooth_mismatches(f64):
    # a wrong analytic gradient on a smooth function must still be reported
    from tilestereo.autodiff.tensor import from_op

    x = t([0.7])
    fn = lambda: from_op(x.data**2, (x,), lambda g: (g * 3 * x.data,))
    assert check_gradients(fn, [x], refine=3) > 0.3


class TestAdam:
    def test_zero_gradient(self):
        store = ParameterStore()
        p = store.add("x", np.array([1.5, -2.0]))
        p.grad = np.zeros(2)
        adam_step(store, lr=0.1)
        assert p.data.tolist() == [1.5, -2.0]
        assert p.grad is None

    def test_first_step_moves_by_lr(self):
        store = ParameterStore()
        p = store.add("x", np.array([1.0]))
        p.grad = np.array([1.0])
        adam_step(store, lr=0.01)
        assert abs(p.data[0] - (1.0 - 0.01)) < 1e-6

    def test_quadratic_convergence(self, f64):
        store = ParameterStore()
        x = store.add("x", np.array([5.0]))
        for _ in range(100):
            with Tape() as tape:
                loss = ops.sum(x * x)
            backward(loss, tape)
            adam_step(store, lr=0.1)
        assert abs(x.data[0]) < 0.5

    def test_missing_gradients(self):
        from tilestereo.autodiff import MissingGradientError

        store = ParameterStore()
        store.add("x", np.zeros(1))
        with pytest.raises(MissingGradientError):
            adam_step(store, lr=0.1)
