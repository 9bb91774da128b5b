"""Forward-value and shape contracts of the tensor engine."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mimnet.tensor as T
from mimnet.tensor import NonFiniteError, ShapeError, Tensor


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = Tensor(rng.random((1, 1, 5, 5)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        y = T.conv2d(x, k, stride=1, padding=0)
        np.testing.assert_array_equal(y.data, x.data)

    def test_all_ones_kernel_on_constant_image(self):
        c = 0.7
        x = Tensor(np.full((1, 1, 6, 6), c))
        k = Tensor(np.ones((1, 1, 3, 3)))
        y = T.conv2d(x, k, stride=1, padding=1)
        # interior pixels see the full 3x3 window
        np.testing.assert_allclose(y.data[0, 0, 1:-1, 1:-1], 9 * c)

    def test_shape_rule_stride2(self, rng):
        x = Tensor(rng.random((1, 1, 8, 8)))
        k = Tensor(rng.random((1, 1, 3, 3)))
        y = T.conv2d(x, k, stride=2, padding=1)
        assert y.shape == (1, 1, 4, 4)

    def test_groups_depthwise(self, rng):
        x = Tensor(rng.random((2, 4, 6, 6)))
        k = Tensor(rng.random((4, 1, 3, 3)))
        y = T.conv2d(x, k, stride=1, padding=1, groups=4)
        assert y.shape == (2, 4, 6, 6)
        # each channel only sees itself
        k0 = Tensor(k.data[:1])
        y0 = T.conv2d(Tensor(x.data[:, :1]), k0, stride=1, padding=1)
        np.testing.assert_allclose(y.data[:, 0], y0.data[:, 0])

    def test_group_mismatch_raises(self, rng):
        x = Tensor(rng.random((1, 3, 4, 4)))
        k = Tensor(rng.random((2, 1, 3, 3)))
        with pytest.raises(ShapeError):
            T.conv2d(x, k, groups=2)

    def test_kernel_too_large_raises(self, rng):
        x = Tensor(rng.random((1, 1, 2, 2)))
        k = Tensor(rng.random((1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            T.conv2d(x, k)

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(3, 12), w=st.integers(3, 12), kh=st.integers(1, 3),
           stride=st.integers(1, 2), padding=st.integers(0, 1))
    def test_shape_contract_randomized(self, h, w, kh, stride, padding):
        if h + 2 * padding < kh or w + 2 * padding < kh:
            return
        x = Tensor(np.zeros((1, 2, h, w)))
        k = Tensor(np.zeros((3, 2, kh, kh)))
        y = T.conv2d(x, k, stride=stride, padding=padding)
        oh = (h + 2 * padding - kh) // stride + 1
        ow = (w + 2 * padding - kh) // stride + 1
        assert y.shape == (1, 3, oh, ow)


class TestTransposedConv2d:
    def test_single_tap_expansion(self):
        v = 1.7
        x = Tensor(np.full((1, 1, 1, 1), v))
        k = Tensor(np.ones((1, 1, 2, 2)))
        y = T.transposed_conv2d(x, k, stride=2)
        assert y.shape == (1, 1, 2, 2)
        np.testing.assert_allclose(y.data, v)

    def test_shape_rule(self, rng):
        x = Tensor(rng.random((1, 2, 4, 4)))
        k = Tensor(rng.random((2, 3, 2, 2)))
        assert T.transposed_conv2d(x, k, stride=2).shape == (1, 3, 8, 8)

    def test_zero_input(self):
        x = Tensor(np.zeros((1, 2, 3, 3)))
        k = Tensor(np.ones((2, 2, 2, 2)))
        np.testing.assert_array_equal(T.transposed_conv2d(x, k, stride=2).data, 0.0)


class TestLinear:
    @settings(max_examples=25, deadline=None)
    @given(lead=st.lists(st.integers(1, 4), min_size=0, max_size=2),
           n_in=st.integers(1, 6), n_out=st.integers(1, 6))
    def test_shape_contract_randomized(self, lead, n_in, n_out):
        x = Tensor(np.zeros(tuple(lead) + (n_in,)))
        w = Tensor(np.zeros((n_out, n_in)))
        assert T.linear(x, w).shape == tuple(lead) + (n_out,)

    def test_identity(self, rng):
        x = Tensor(rng.random((5, 4)))
        w = Tensor(np.eye(4))
        np.testing.assert_allclose(T.linear(x, w).data, x.data)

    def test_affine_scalar(self):
        x = Tensor(np.array([3.0]))
        w = Tensor(np.array([[2.0]]))
        b = Tensor(np.array([1.0]))
        np.testing.assert_allclose(T.linear(x, w, b).data, [7.0])

    def test_batch_axis_preserved(self, rng):
        x = Tensor(rng.random((5, 4)))
        w = Tensor(rng.random((2, 4)))
        assert T.linear(x, w).shape == (5, 2)

    def test_extent_mismatch(self, rng):
        with pytest.raises(ShapeError):
            T.linear(Tensor(rng.random((5, 4))), Tensor(rng.random((2, 3))))


class TestNorm:
    def test_constant_input_zero_beta(self):
        x = Tensor(np.full((2, 3, 4), 5.0))
        g = Tensor(np.ones(4))
        b = Tensor(np.zeros(4))
        y = T.layer_norm(x, g, b, eps=1e-5)
        np.testing.assert_allclose(y.data, 0.0)

    def test_unit_variance_passthrough(self):
        x = Tensor(np.array([[1.0, -1.0]]))
        y = T.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(y.data, [[1.0, -1.0]], atol=1e-6)

    def test_mean_shift_invariance(self, rng):
        x = rng.random((3, 8))
        g, b = Tensor(rng.random(8)), Tensor(rng.random(8))
        y1 = T.layer_norm(Tensor(x), g, b)
        y2 = T.layer_norm(Tensor(x + 11.5), g, b)
        np.testing.assert_allclose(y1.data, y2.data, atol=1e-10)

    def test_batch_norm_train_and_eval(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 5, 5)))
        g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
        rm, rv = np.zeros(3), np.ones(3)
        y = T.batch_norm(x, g, b, rm, rv, training=True, momentum=0.1)
        np.testing.assert_allclose(y.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.data.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
        # running stats moved toward batch stats with momentum 0.1
        np.testing.assert_allclose(rm, 0.1 * x.data.mean(axis=(0, 2, 3)), atol=1e-12)
        y_eval = T.batch_norm(x, g, b, rm, rv, training=False)
        assert y_eval.shape == x.shape

    def test_bad_eps(self, rng):
        x = Tensor(rng.random((1, 2)))
        with pytest.raises(ShapeError):
            T.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_norm_dispatch(self, rng):
        x = Tensor(rng.random((2, 5)))
        g, b = Tensor(np.ones(5)), Tensor(np.zeros(5))
        via_dispatch = T.norm(x, "layer", g, b)
        np.testing.assert_array_equal(via_dispatch.data, T.layer_norm(x, g, b).data)
        x4 = Tensor(rng.random((2, 3, 4, 4)))
        g4, b4 = Tensor(np.ones(3)), Tensor(np.zeros(3))
        out = T.norm(x4, "batch", g4, b4, training=True)
        assert out.shape == x4.shape
        with pytest.raises(ValueError):
            T.norm(x, "instance", g, b)


class TestActivations:
    def test_zeros(self):
        z = Tensor(np.zeros(3))
        assert T.gelu(z).data.tolist() == [0, 0, 0]
        assert T.silu(z).data.tolist() == [0, 0, 0]
        np.testing.assert_allclose(T.sigmoid(z).data, 0.5)

    def test_softplus_matches_definition(self, rng):
        x = rng.uniform(-5, 5, size=64)
        got = T.softplus(Tensor(x)).data
        np.testing.assert_allclose(got, np.log1p(np.exp(x)), rtol=1e-12)

    def test_gelu_exact_gaussian_cdf(self):
        x = np.array([-2.0, -0.5, 0.3, 1.7])
        want = x * 0.5 * (1 + np.array([math.erf(v / math.sqrt(2)) for v in x]))
        np.testing.assert_allclose(T.activation("gelu", Tensor(x)).data, want, rtol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.activation("tanh", Tensor(np.zeros(1)))


class TestShapeOps:
    def test_reshape_permute_roundtrip(self, rng):
        x = rng.random((2, 3, 4))
        t = T.permute(Tensor(x), (2, 0, 1))
        assert t.shape == (4, 2, 3)
        back = T.permute(t, (1, 2, 0))
        np.testing.assert_array_equal(back.data, x)

    def test_concat_split(self, rng):
        a, b = rng.random((2, 3)), rng.random((2, 5))
        cat = T.concat([Tensor(a), Tensor(b)], axis=1)
        s1, s2 = T.split(cat, [3, 5], axis=1)
        np.testing.assert_array_equal(s1.data, a)
        np.testing.assert_array_equal(s2.data, b)

    def test_split_bad_sizes(self, rng):
        with pytest.raises(ShapeError):
            T.split(Tensor(rng.random((2, 4))), [1, 2], axis=1)

    def test_permute_rows_inverse(self, rng):
        x = Tensor(rng.random((2, 6, 3)))
        perm = rng.permutation(6)
        y = T.permute_rows(x, perm, axis=1)
        back = T.permute_rows(y, np.argsort(perm), axis=1)
        np.testing.assert_array_equal(back.data, x.data)

    def test_bilinear_identity_and_doubling(self, rng):
        x = Tensor(rng.random((1, 2, 4, 4)))
        same = T.bilinear_interpolate(x, (4, 4))
        np.testing.assert_allclose(same.data, x.data)
        up = T.bilinear_interpolate(x, (8, 8))
        assert up.shape == (1, 2, 8, 8)
        c = Tensor(np.full((1, 1, 3, 3), 2.5))
        np.testing.assert_allclose(T.bilinear_interpolate(c, (7, 7)).data, 2.5)


class TestNumericalContracts:
    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_nonfinite_detection(self):
        x = Tensor(np.array([1e308]))
        with pytest.raises(NonFiniteError):
            T.texp(x)  # overflows to inf

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_nonfinite_toggle(self):
        T.set_debug_checks(False)
        y = T.texp(Tensor(np.array([1e308])))
        assert np.isinf(y.data[0])
        T.set_debug_checks(True)

    def test_forward_bitwise_deterministic(self, rng):
        x = rng.standard_normal((3, 17))
        w = rng.standard_normal((5, 17))

        def run():
            return T.gelu(T.linear(Tensor(x), Tensor(w))).data.tobytes()

        assert run() == run()

    def test_precision_modes(self):
        assert T.dtype_for("single") == np.float32
        assert T.dtype_for("double") == np.float64
        with pytest.raises(ValueError):
            T.dtype_for("half")
