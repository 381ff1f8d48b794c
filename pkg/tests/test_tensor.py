import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cassirecon import functional as F
from cassirecon.tensor import ShapeError, Tensor, backward, concat, matmul, no_grad


def conv_loops(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct seven-loop grouped convolution, used as an independent reference."""
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    og = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for s in range(n):
        for o in range(cout):
            g = o // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, c, u, v] * xp[s, g * cg + c, i * stride + u, j * stride + v]
                    out[s, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestConv:
    def test_unit_kernel_is_identity(self):
        x = np.arange(12.0).reshape(1, 1, 3, 4)
        out = F.conv2d(t(x), t(np.ones((1, 1, 1, 1))))
        assert np.array_equal(out.data, x)

    def test_all_ones_sums_window(self):
        out = F.conv2d(t(np.ones((1, 1, 3, 3))), t(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_zero_depthwise_keeps_extent(self):
        x = np.random.default_rng(0).standard_normal((1, 5, 6, 7))
        out = F.conv2d(t(x), t(np.zeros((5, 1, 3, 3))), padding=1, groups=5)
        assert out.shape == x.shape
        assert not out.data.any()

    @pytest.mark.parametrize("cin,cout,k,stride,pad,groups", [
        (3, 4, 3, 1, 1, 1), (3, 5, 4, 2, 1, 1), (4, 4, 3, 1, 1, 4), (4, 6, 3, 1, 0, 2), (2, 3, 1, 1, 0, 1),
    ])
    def test_matches_loop_oracle(self, cin, cout, k, stride, pad, groups):
        rng = np.random.default_rng(cin * 100 + cout)
        x = rng.standard_normal((2, cin, 7, 6))
        w = rng.standard_normal((cout, cin // groups, k, k))
        b = rng.standard_normal(cout)
        got = F.conv2d(t(x), t(w), t(b), stride=stride, padding=pad, groups=groups).data
        np.testing.assert_allclose(got, conv_loops(x, w, b, stride, pad, groups), rtol=0, atol=1e-12)

    def test_im2col_layout(self):
        x = np.arange(2 * 3 * 4.0).reshape(1, 2, 3, 4)
        cols = F.im2col(x, 2, 2, 1, 1)
        assert cols.shape == (2 * 3, 2 * 2 * 2)
        # first output pixel: channel 0 window then channel 1 window
        assert np.array_equal(cols[0], [0, 1, 4, 5, 12, 13, 16, 17])

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            F.conv2d(t(np.ones((1, 3, 4, 4))), t(np.ones((2, 2, 1, 1))))
        with pytest.raises(ShapeError):
            F.conv2d(t(np.ones((1, 3, 4, 4))), t(np.ones((3, 1, 3, 3))), groups=2)
        with pytest.raises(ShapeError):
            F.conv2d(t(np.ones((1, 1, 2, 2))), t(np.ones((1, 1, 3, 3))))


class TestPointwise:
    def test_gelu_values(self):
        assert F.gelu(t([0.0])).data[0] == 0.0
        ref = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(F.gelu(t([1.0])).data[0] - ref) < 1e-15
        assert abs(F.gelu(t([1.0])).data[0] - 0.841345) < 1e-6

    def test_sigmoid_zero(self):
        assert F.sigmoid(t([0.0])).data[0] == 0.5

    def test_softmax_fixtures(self):
        np.testing.assert_allclose(F.softmax(t(np.full(5, 3.7))).data, np.full(5, 0.2), atol=1e-15)
        np.testing.assert_allclose(F.softmax(t([0.0, math.log(2.0)])).data, [1 / 3, 2 / 3], atol=1e-15)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_softmax_normalizes(self, xs):
        out = F.softmax(t(xs)).data
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.all(out >= 0)

    def test_layer_norm_fixtures(self):
        ones, zeros = t(np.ones(2)), t(np.zeros(2))
        assert not F.layer_norm(t(np.full((3, 2), 4.0)), ones, zeros).data.any()
        np.testing.assert_allclose(F.layer_norm(t([[1.0, 3.0]]), ones, zeros, eps=0.0).data, [[-1.0, 1.0]])
        beta = t([0.25, -2.0])
        out = F.layer_norm(t(np.random.default_rng(1).standard_normal((4, 2))), zeros, beta)
        assert np.array_equal(out.data, np.broadcast_to(beta.data, (4, 2)))


class TestLinearAlgebra:
    def test_matmul_fixtures(self):
        x = np.random.default_rng(2).standard_normal((3, 4))
        assert np.array_equal(matmul(t(np.eye(3)), t(x)).data, x)
        assert np.array_equal(matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[1.0], [1.0]])).data, [[3.0], [7.0]])

    def test_concat_and_split_duality(self):
        a, b = t(np.ones((1, 2, 3, 3)), True), t(np.ones((1, 3, 3, 3)), True)
        out = concat([a, b], axis=1)
        assert out.shape == (1, 5, 3, 3)
        backward(out.sum())
        assert np.array_equal(a.grad, np.ones(a.shape)) and np.array_equal(b.grad, np.ones(b.shape))


class TestResample:
    def test_constant_preserved(self):
        out = F.resample(t(np.full((1, 2, 3, 5), 0.7)), (7, 2))
        np.testing.assert_allclose(out.data, 0.7, atol=1e-15)
        assert np.array_equal(F.adaptive_avg_pool_1x1(t(np.full((1, 2, 3, 3), 2.5))).data, np.full((1, 2, 1, 1), 2.5))

    def test_linear_align_corners(self):
        out = F.resample(t(np.array([1.0, 3.0]).reshape(1, 1, 1, 2)), (1, 4))
        np.testing.assert_allclose(out.data.ravel(), [1.0, 5 / 3, 7 / 3, 3.0], atol=1e-15)


class TestAutodiff:
    def test_square(self):
        x = t([3.0], True)
        backward((x * x).sum())
        assert x.grad[0] == 6.0

    def test_gelu_matvec_against_central_difference(self):
        rng = np.random.default_rng(3)
        w, x0 = rng.standard_normal((4, 3)), rng.standard_normal((3, 1))
        x = t(x0, True)
        backward(F.gelu(matmul(t(w), x)).sum())
        h = 1e-5
        f = lambda v: F.gelu(t(w @ v)).data.sum()
        num = np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(3)[:, :, None]])
        np.testing.assert_allclose(x.grad.ravel(), num.ravel(), rtol=1e-5)

    def test_untouched_parameter_gets_exact_zero(self):
        from cassirecon.nn import Parameter
        a, b = Parameter(np.ones(3)), Parameter(np.ones(2))
        grads = backward((a * 2.0).sum(), [("a", a), ("b", b)])
        assert np.array_equal(grads["b"], np.zeros(2))
        assert np.array_equal(grads["a"], np.full(3, 2.0))

    def test_shared_node_accumulates(self):
        x = t([2.0], True)
        y = x * x
        backward((y + y * x).sum())  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad[0] == 16.0

    def test_no_grad_builds_no_graph(self):
        x = t([1.0], True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_nonscalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            backward(t(np.ones(2), True) * 1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**16))
    def test_broadcast_add_mul_grads(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a, b = t(rng.standard_normal((n, m)), True), t(rng.standard_normal((1, m)), True)
        backward((a * b + b).sum())
        np.testing.assert_allclose(a.grad, np.broadcast_to(b.data, (n, m)))
        np.testing.assert_allclose(b.grad, a.data.sum(axis=0, keepdims=True) + n)


class TestGradientChecker:
    def test_flags_a_gradient_missing_a_path(self):
        from cassirecon.gradcheck import check_gradients
        rng = np.random.default_rng(11)
        x = t(rng.standard_normal((3, 4)), True)
        err, n, _ = check_gradients(lambda: x * Tensor(x.data), {"x": x}, rng)  # true grad 2x, graph sees x
        assert n == 4 and abs(err - 0.5) < 1e-6
