"""Differentiable ops: forward values against oracles, gradients against
central finite differences, and the documented subgradient conventions."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from cannet.errors import ConfigError, ShapeError
from cannet.neural_core import Graph, Tensor, backward, finite_diff_grad, record
from cannet.neural_core import ops

from oracles import (
    conv2d_oracle,
    dense_oracle,
    gap_oracle,
    maxpool2d_oracle,
    resize_bilinear_oracle,
)


def run_backward(build):
    """Record build(), sweep gradients, return the loss tensor."""
    g = Graph()
    with record(g):
        loss = build()
    backward(loss, g)
    return loss


def check_grads(build, tensors, eps=1e-5, rtol=1e-5, atol=1e-8):
    """Analytic gradients of a scalar-valued closure vs central differences."""
    run_backward(build)
    for t in tensors:
        analytic = t.grad.copy()
        numeric = finite_diff_grad(lambda _: build(), t, eps=eps)
        assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


class TestElementwiseForward:
    def test_arithmetic_dunders(self):
        x = Tensor([2.0, 4.0])
        assert_allclose((x + 1.0).values, [3.0, 5.0])
        assert_allclose((1.0 + x).values, [3.0, 5.0])
        assert_allclose((x - 1.0).values, [1.0, 3.0])
        assert_allclose((1.0 - x).values, [-1.0, -3.0])
        assert_allclose((x * 3.0).values, [6.0, 12.0])
        assert_allclose((x / 2.0).values, [1.0, 2.0])
        assert_allclose((8.0 / x).values, [4.0, 2.0])
        assert_allclose((-x).values, [-2.0, -4.0])
        assert_allclose((x ** 2).values, [4.0, 16.0])

    def test_sigmoid_at_zero(self):
        assert ops.sigmoid(Tensor(0.0)).item() == 0.5

    def test_sigmoid_symmetry(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(-50, 50, size=200)
        s = ops.sigmoid(Tensor(x)).values + ops.sigmoid(Tensor(-x)).values
        assert_allclose(s, 1.0, atol=1e-12)

    def test_sigmoid_saturates_inside_open_interval(self):
        p = ops.sigmoid(Tensor([-1e4, -100.0, 100.0, 1e4])).values
        assert np.all(p > 0.0)
        assert np.all(p < 1.0)

    def test_log_clamps_below_epsilon(self):
        x = Tensor([0.0, 1e-15, 1e-12, 1.0])
        out = ops.log(x, epsilon=1e-12).values
        assert_allclose(out[:3], np.log(1e-12))
        assert_allclose(out[3], 0.0)

    def test_sqrt_rejects_negative(self):
        with pytest.raises(ShapeError):
            ops.sqrt(Tensor([-1.0]))

    def test_pow_zero_gives_ones(self):
        x = Tensor([0.0, 0.5, 3.0], requires_grad=True)
        out = run_backward(lambda: ops.reduce_sum(ops.pow_const(x, 0.0)))
        assert_allclose(out.values, 3.0)
        assert_array_equal(x.grad, np.zeros(3))

    def test_maximum_values(self):
        a = Tensor([1.0, 5.0, 2.0])
        b = Tensor([3.0, 5.0, 0.0])
        assert_allclose(ops.maximum(a, b).values, [3.0, 5.0, 2.0])


class TestSubgradientConventions:
    """Kink-point behavior is pinned down, not left to chance."""

    def test_relu_zero_at_kink(self):
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        run_backward(lambda: ops.reduce_sum(ops.relu(x)))
        assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_sqrt_zero_at_zero(self):
        x = Tensor([0.0, 4.0], requires_grad=True)
        run_backward(lambda: ops.reduce_sum(ops.sqrt(x)))
        assert_array_equal(x.grad, [0.0, 0.25])

    def test_log_zero_gradient_in_clamp_region(self):
        x = Tensor([0.0, 1e-13, 0.5], requires_grad=True)
        run_backward(lambda: ops.reduce_sum(ops.log(x, epsilon=1e-12)))
        assert_array_equal(x.grad, [0.0, 0.0, 2.0])

    def test_maximum_tie_routes_to_first_argument(self):
        a = Tensor([2.0, 7.0], requires_grad=True)
        b = Tensor([2.0, 3.0], requires_grad=True)
        run_backward(lambda: ops.reduce_sum(ops.maximum(a, b)))
        assert_array_equal(a.grad, [1.0, 1.0])
        assert_array_equal(b.grad, [0.0, 0.0])

    def test_per_sample_max_tie_first_occurrence(self):
        x = Tensor([[3.0, 3.0], [1.0, 2.0]], requires_grad=True)
        out = run_backward(lambda: ops.reduce_sum(ops.per_sample_max(x)))
        assert out.item() == 5.0
        assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])


class TestGradientsAgainstFiniteDifferences:
    def test_binary_ops(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        check_grads(lambda: ops.reduce_sum(a * b + a / b - b), [a, b])

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4,)), requires_grad=True)
        check_grads(lambda: ops.reduce_sum(a * b), [a, b])

    def test_unary_chain(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.uniform(0.2, 1.5, (5,)), requires_grad=True)
        check_grads(
            lambda: ops.reduce_sum(ops.sqrt(x) * ops.log(x) + ops.sigmoid(x)), [x]
        )

    def test_pow_const_fractional(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.uniform(0.3, 2.0, (6,)), requires_grad=True)
        check_grads(lambda: ops.reduce_sum(ops.pow_const(x, 1.7)), [x])

    def test_conv_full(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        check_grads(
            lambda: ops.reduce_sum(ops.conv2d(x, w, b, stride=1, padding=1) * 0.1),
            [x, w, b],
            rtol=1e-4,
        )

    def test_pool_away_from_ties(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
        check_grads(lambda: ops.reduce_sum(ops.max_pool2d(x, 2)), [x], eps=1e-6)

    def test_gap_and_dense(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(5), requires_grad=True)
        check_grads(
            lambda: ops.reduce_sum(ops.dense(ops.global_avg_pool(x), w, b) ** 2),
            [x, w, b],
            rtol=1e-4,
        )

    def test_reductions_with_axes(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((3, 4, 2)), requires_grad=True)
        check_grads(
            lambda: ops.reduce_sum(
                ops.reduce_mean(x, axis=(1,), keepdims=True)
                * ops.reduce_sum(x, axis=2, keepdims=True)
            ),
            [x],
        )

    def test_resize_bilinear(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        check_grads(lambda: ops.reduce_sum(ops.resize_bilinear(x, (7, 5)) ** 2), [x])

    def test_concat_and_masked_fill(self):
        rng = np.random.default_rng(10)
        a = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 1, 3, 3)), requires_grad=True)
        keep = np.zeros((2, 3, 3, 3))
        keep[:, :, 1, :] = 1.0

        def build():
            cat = ops.concat([a, b], axis=1)
            return ops.reduce_sum(ops.masked_fill(cat, keep, 5.0) * cat)

        check_grads(build, [a, b])

    def test_sigmoid_grad_quarter_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        run_backward(lambda: ops.sigmoid(x))
        assert_allclose(x.grad, 0.25)


class TestStructuredOpsForward:
    def test_conv_identity_kernel(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((2, 1, 6, 6)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        out = ops.conv2d(x, w, b)
        assert_array_equal(out.values, x.values)

    def test_conv_matches_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
        assert out.shape == (2, 4, 8, 8)
        assert_allclose(out.values, conv2d_oracle(x, w, b, 1, 1), atol=1e-12)

    def test_conv_validates_channels(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w, Tensor(np.zeros(2)))

    def test_pool_matches_oracle(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 3, 8, 8))
        out = ops.max_pool2d(Tensor(x), 2)
        want, _ = maxpool2d_oracle(x, 2, 2)
        assert_array_equal(out.values, want)

    def test_gap_matches_oracle(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, 2, 5, 5))
        assert_allclose(
            ops.global_avg_pool(Tensor(x)).values, gap_oracle(x), atol=1e-12
        )

    def test_dense_matches_oracle(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((3, 6))
        b = rng.standard_normal(3)
        assert_allclose(
            ops.dense(Tensor(x), Tensor(w), Tensor(b)).values,
            dense_oracle(x, w, b),
            atol=1e-12,
        )

    def test_resize_matches_oracle(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((2, 2, 4, 6))
        for target in [(4, 6), (8, 6), (9, 13), (4, 11)]:
            got = ops.resize_bilinear(Tensor(x), target).values
            assert_allclose(got, resize_bilinear_oracle(x, target), atol=1e-12)

    def test_resize_identity_returns_same_tensor(self):
        x = Tensor(np.zeros((1, 1, 4, 4)))
        assert ops.resize_bilinear(x, (4, 4)) is x

    def test_resize_corners_preserved(self):
        x = np.zeros((1, 1, 2, 2))
        x[0, 0] = [[1.0, 2.0], [3.0, 4.0]]
        out = ops.resize_bilinear(Tensor(x), (5, 5)).values[0, 0]
        assert_allclose(
            [out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]], [1.0, 2.0, 3.0, 4.0]
        )

    def test_concat_extent_mismatch(self):
        a = Tensor(np.zeros((2, 2, 3, 3)))
        b = Tensor(np.zeros((2, 2, 4, 3)))
        with pytest.raises(ShapeError):
            ops.concat([a, b], axis=1)


class TestDropout:
    def test_eval_mode_is_identity_object(self):
        x = Tensor(np.ones((4, 4)))
        assert ops.dropout(x, 0.5, training=False) is x

    def test_rate_zero_is_identity_object(self):
        x = Tensor(np.ones((4, 4)))
        rng = np.random.default_rng(0)
        assert ops.dropout(x, 0.0, training=True, rng=rng) is x

    def test_invalid_rate(self):
        x = Tensor(np.ones(3))
        with pytest.raises(ConfigError):
            ops.dropout(x, 1.0, training=True, rng=np.random.default_rng(0))

    def test_training_requires_rng(self):
        x = Tensor(np.ones(3))
        with pytest.raises(ConfigError):
            ops.dropout(x, 0.5, training=True)

    def test_inverted_scaling_statistics(self):
        rng = np.random.default_rng(123)
        x = Tensor(np.ones((200, 200)))
        out = ops.dropout(x, 0.3, training=True, rng=rng).values
        kept = out != 0.0
        # survivor fraction ~ 0.7 within 4 sigma of the binomial
        frac = kept.mean()
        sigma = np.sqrt(0.3 * 0.7 / out.size)
        assert abs(frac - 0.7) < 4 * sigma
        assert_allclose(out[kept], 1.0 / 0.7)

    def test_gradient_uses_same_mask(self):
        rng = np.random.default_rng(7)
        x = Tensor(np.ones((8, 8)), requires_grad=True)
        g = Graph()
        with record(g):
            out = ops.dropout(x, 0.5, training=True, rng=rng)
            loss = ops.reduce_sum(out)
        backward(loss, g)
        assert_array_equal(x.grad, (out.values != 0) * 2.0)
