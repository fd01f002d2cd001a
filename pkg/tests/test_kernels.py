"""Kernel backends: equivalence with each other and with loop oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from cannet.errors import ConfigError, ShapeError
from cannet.neural_core import kernels
from cannet.neural_core.kernels import common, numpy_backend

from oracles import conv2d_oracle, maxpool2d_oracle

needs_compiled = pytest.mark.skipif(
    not kernels.HAVE_COMPILED, reason="compiled kernels not built"
)


def _rand_conv(rng, n=2, c_in=3, c_out=4, hw=9, k=3):
    x = rng.standard_normal((n, c_in, hw, hw))
    w = rng.standard_normal((c_out, c_in, k, k))
    b = rng.standard_normal(c_out)
    return x, w, b


class TestOutputGeometry:
    def test_basic_shapes(self):
        assert common.conv_output_hw(8, 8, 3, 1, 1) == (8, 8)
        assert common.conv_output_hw(8, 8, 3, 1, 0) == (6, 6)
        assert common.conv_output_hw(8, 8, 2, 2, 0) == (4, 4)
        assert common.conv_output_hw(7, 9, 1, 1, 0) == (7, 9)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            common.conv_output_hw(4, 4, 7, 1, 0)

    def test_non_integral_extent(self):
        # span 6 does not divide by stride 4
        with pytest.raises(ConfigError):
            common.conv_output_hw(8, 8, 2, 4, 0)

    @pytest.mark.parametrize("stride,pad", [(0, 0), (-1, 0), (1, -2)])
    def test_bad_stride_or_pad(self, stride, pad):
        with pytest.raises(ConfigError):
            common.conv_output_hw(8, 8, 3, stride, pad)


class TestConvAgainstOracle:
    @pytest.mark.parametrize("backend", ["py", "cy"])
    @pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 0, 2), (1, 0, 1), (2, 1, 2)])
    def test_forward(self, backend, stride, pad, k):
        if backend == "cy" and not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        rng = np.random.default_rng(11)
        x, w, b = _rand_conv(rng, hw=8, k=k)
        want = conv2d_oracle(x, w, b, stride, pad)
        got = kernels._BACKENDS[backend].conv2d_forward(x, w, b, stride, pad)
        assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("backend", ["py", "cy"])
    def test_backward_input_via_forward_linearity(self, backend):
        # conv is linear in x, so d<dout, conv(x)>/dx applied to a one-hot
        # dout recovers one forward row; checking a few random directions
        # against numerical differentiation of the forward map
        if backend == "cy" and not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        K = kernels._BACKENDS[backend]
        rng = np.random.default_rng(3)
        x, w, b = _rand_conv(rng, n=1, c_in=2, c_out=2, hw=6)
        dout = rng.standard_normal((1, 2, 6, 6))
        dx = K.conv2d_backward_input(dout, w, (6, 6), 1, 1)
        # <dout, conv(x+eps*v)> - <dout, conv(x)> ~= eps * <dx, v>
        v = rng.standard_normal(x.shape)
        eps = 1e-6
        lhs = np.sum(dout * conv2d_oracle(x + eps * v, w, b, 1, 1))
        lhs -= np.sum(dout * conv2d_oracle(x, w, b, 1, 1))
        assert_allclose(lhs / eps, np.sum(dx * v), rtol=1e-6)

    @pytest.mark.parametrize("backend", ["py", "cy"])
    def test_backward_params_matches_numerical(self, backend):
        if backend == "cy" and not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        K = kernels._BACKENDS[backend]
        rng = np.random.default_rng(4)
        x, w, b = _rand_conv(rng, n=2, c_in=2, c_out=3, hw=5)
        dout = rng.standard_normal((2, 3, 5, 5))
        dw, db = K.conv2d_backward_params(x, dout, 3, 1, 1)
        eps = 1e-6
        for idx in [(0, 0, 0, 0), (2, 1, 2, 2), (1, 0, 1, 2)]:
            wp = w.copy()
            wp[idx] += eps
            num = (np.sum(dout * conv2d_oracle(x, wp, b, 1, 1))
                   - np.sum(dout * conv2d_oracle(x, w, b, 1, 1))) / eps
            assert_allclose(dw[idx], num, rtol=1e-5)
        bp = b.copy()
        bp[1] += eps
        num = (np.sum(dout * conv2d_oracle(x, w, bp, 1, 1))
               - np.sum(dout * conv2d_oracle(x, w, b, 1, 1))) / eps
        assert_allclose(db[1], num, rtol=1e-6)


class TestPoolAgainstOracle:
    @pytest.mark.parametrize("backend", ["py", "cy"])
    @pytest.mark.parametrize("k,stride,hw", [(2, 2, 8), (3, 3, 9), (3, 1, 7), (2, 1, 5)])
    def test_forward_values_and_argmax(self, backend, k, stride, hw):
        if backend == "cy" and not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3, hw, hw))
        want, want_arg = maxpool2d_oracle(x, k, stride)
        got, got_arg = kernels._BACKENDS[backend].maxpool_forward(x, k, stride)
        assert_allclose(got, want, atol=0)
        assert_array_equal(got_arg, want_arg)

    @pytest.mark.parametrize("backend", ["py", "cy"])
    def test_ties_go_to_first_window_element(self, backend):
        if backend == "cy" and not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        x = np.ones((1, 1, 4, 4))
        _, arg = kernels._BACKENDS[backend].maxpool_forward(x, 2, 2)
        # flat index of each window's top-left corner
        assert_array_equal(arg[0, 0], [[0, 2], [8, 10]])

    @pytest.mark.parametrize("backend", ["py", "cy"])
    def test_backward_overlapping_windows_accumulate(self, backend):
        if backend == "cy" and not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        K = kernels._BACKENDS[backend]
        # single peak at (1,1) wins every 2x2 stride-1 window
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 5.0
        out, arg = K.maxpool_forward(x, 2, 1)
        assert_allclose(out, np.full((1, 1, 2, 2), 5.0))
        dout = np.ones((1, 1, 2, 2))
        dx = K.maxpool_backward(dout, arg, (3, 3))
        want = np.zeros((1, 1, 3, 3))
        want[0, 0, 1, 1] = 4.0
        assert_allclose(dx, want)


@needs_compiled
class TestBackendEquivalence:
    """The two implementations must agree to float64 round-off."""

    @pytest.mark.parametrize("n,c_in,c_out,hw,k,stride,pad", [
        (4, 3, 8, 12, 3, 1, 1),
        (2, 1, 4, 16, 3, 1, 1),
        (3, 5, 2, 10, 1, 1, 0),
        (2, 4, 4, 11, 3, 2, 1),
    ])
    def test_conv_all_directions(self, n, c_in, c_out, hw, k, stride, pad):
        rng = np.random.default_rng(20)
        x = rng.standard_normal((n, c_in, hw, hw))
        w = rng.standard_normal((c_out, c_in, k, k))
        b = rng.standard_normal(c_out)
        py = kernels._BACKENDS["py"]
        cy = kernels._BACKENDS["cy"]
        y1 = py.conv2d_forward(x, w, b, stride, pad)
        y2 = cy.conv2d_forward(x, w, b, stride, pad)
        assert_allclose(y2, y1, atol=1e-11)
        dout = rng.standard_normal(y1.shape)
        dx1 = py.conv2d_backward_input(dout, w, (hw, hw), stride, pad)
        dx2 = cy.conv2d_backward_input(dout, w, (hw, hw), stride, pad)
        assert_allclose(dx2, dx1, atol=1e-11)
        dw1, db1 = py.conv2d_backward_params(x, dout, k, stride, pad)
        dw2, db2 = cy.conv2d_backward_params(x, dout, k, stride, pad)
        assert_allclose(dw2, dw1, atol=1e-10)
        assert_allclose(db2, db1, atol=1e-10)

    def test_pool_bitwise(self):
        rng = np.random.default_rng(21)
        x = rng.standard_normal((3, 4, 12, 12))
        y1, a1 = kernels._BACKENDS["py"].maxpool_forward(x, 2, 2)
        y2, a2 = kernels._BACKENDS["cy"].maxpool_forward(x, 2, 2)
        assert_array_equal(y1, y2)
        assert_array_equal(a1, a2)
        dout = rng.standard_normal(y1.shape)
        dx1 = kernels._BACKENDS["py"].maxpool_backward(dout, a1, (12, 12))
        dx2 = kernels._BACKENDS["cy"].maxpool_backward(dout, a2, (12, 12))
        assert_array_equal(dx1, dx2)


class TestBackendSelection:
    def test_unknown_backend_rejected(self):
        with pytest.raises(ConfigError):
            kernels.use_backend("gpu")

    def test_context_manager_restores(self):
        before = kernels.backend_name()
        with kernels.backend("py"):
            assert kernels.backend_name() == "py"
        assert kernels.backend_name() == before

    @needs_compiled
    def test_mixed_composes_fastest_measured(self):
        # conv comes from the BLAS-backed numpy path, pooling from the
        # compiled loops
        mixed = kernels._BACKENDS["mixed"]
        assert mixed.conv2d_forward is numpy_backend.conv2d_forward
        assert mixed.maxpool_forward is not numpy_backend.maxpool_forward

    def test_module_level_functions_follow_selection(self):
        rng = np.random.default_rng(22)
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        with kernels.backend("py"):
            want = numpy_backend.conv2d_forward(x, w, b, 1, 1)
            got = kernels.conv2d_forward(x, w, b, 1, 1)
        assert_array_equal(got, want)
