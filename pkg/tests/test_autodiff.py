"""Tensor engine: forward semantics against loop oracles, gradients against
central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stwnn import autodiff as ad
from stwnn.autodiff import Tensor
from stwnn.errors import DimensionError, UsageError


def naive_conv3d(xv, kv, bv, stride, pad):
    """Direct correlation sum, looped over every output and kernel coordinate."""
    c_in, d, h, w = xv.shape
    c_out, _, kd, kh, kw = kv.shape
    sd, sh, sw = stride
    pd, ph, pw = pad
    xp = np.pad(xv, ((0, 0), (pd, pd), (ph, ph), (pw, pw)))
    od = (d + 2 * pd - kd) // sd + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((c_out, od, oh, ow))
    for co in range(c_out):
        for i in range(od):
            for j in range(oh):
                for l in range(ow):
                    acc = bv[co]
                    for a in range(kd):
                        for b in range(kh):
                            for c in range(kw):
                                for ci in range(c_in):
                                    acc += (kv[co, ci, a, b, c]
                                            * xp[ci, i * sd + a, j * sh + b, l * sw + c])
                    out[co, i, j, l] = acc
    return out


class TestConv3d:
    def test_identity_kernel(self):
        x = Tensor(np.random.default_rng(0).standard_normal((1, 3, 3, 3)))
        k = Tensor(np.ones((1, 1, 1, 1, 1)))
        out = ad.conv3d(x, k, Tensor(np.zeros(1)), stride=1, padding=0)
        np.testing.assert_array_equal(out.values, x.values)

    def test_counting_kernel(self):
        x = Tensor(np.ones((1, 2, 2, 2)))
        k = Tensor(np.ones((1, 1, 2, 2, 2)))
        out = ad.conv3d(x, k, Tensor(np.zeros(1)), stride=1, padding=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.values.reshape(()) == pytest.approx(8.0)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 5, 5, 5)))
        k = Tensor(rng.standard_normal((3, 2, 3, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        out = ad.conv3d(x, k, b, stride=2, padding=1)
        ref = naive_conv3d(x.values, k.values, b.values, (2, 2, 2), (1, 1, 1))
        np.testing.assert_allclose(out.values, ref, atol=1e-10)

    @pytest.mark.parametrize("dims,kdims,stride,pad", [
        ((1, 1, 1), (1, 1, 1), 1, 0),
        ((4, 3, 2), (2, 2, 1), 1, 1),
        ((5, 4, 6), (3, 3, 3), 2, 1),
        ((6, 6, 6), (3, 1, 2), 2, 0),
        ((2, 5, 3), (1, 3, 3), 1, 1),
    ])
    def test_shape_formula_and_values(self, dims, kdims, stride, pad):
        rng = np.random.default_rng(hash((dims, kdims, stride, pad)) % 2**32)
        x = Tensor(rng.standard_normal((2,) + dims))
        k = Tensor(rng.standard_normal((2, 2) + kdims))
        b = Tensor(rng.standard_normal(2))
        out = ad.conv3d(x, k, b, stride=stride, padding=pad)
        ref = naive_conv3d(x.values, k.values, b.values, (stride,) * 3, (pad,) * 3)
        assert out.shape == ref.shape
        np.testing.assert_allclose(out.values, ref, atol=1e-10)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((2, 3, 3, 3)))
        k = Tensor(np.zeros((1, 3, 1, 1, 1)))
        with pytest.raises(DimensionError):
            ad.conv3d(x, k, Tensor(np.zeros(1)))

    def test_kernel_too_large_raises(self):
        x = Tensor(np.zeros((1, 2, 2, 2)))
        k = Tensor(np.zeros((1, 1, 3, 3, 3)))
        with pytest.raises(DimensionError):
            ad.conv3d(x, k, Tensor(np.zeros(1)), stride=1, padding=0)


class TestLinear:
    def test_identity(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]))
        out = ad.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.values, x.values)

    def test_hand_sum(self):
        out = ad.linear(Tensor(np.array([2.0, 3.0])),
                        Tensor(np.array([[1.0, 1.0]])),
                        Tensor(np.array([0.5])))
        assert out.values[0] == pytest.approx(5.5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal(8))
        w = Tensor(rng.standard_normal((4, 8)))
        b = Tensor(rng.standard_normal(4))
        out = ad.linear(x, w, b)
        ref = np.array([sum(w.values[j, k] * x.values[k] for k in range(8)) + b.values[j]
                        for j in range(4)])
        np.testing.assert_allclose(out.values, ref, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            ad.linear(Tensor(np.zeros(3)), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))


class TestActivations:
    def test_softmax_uniform(self):
        out = ad.softmax(Tensor(np.array([3.3, 3.3, 3.3])))
        np.testing.assert_allclose(out.values, [1 / 3] * 3, atol=1e-12)

    def test_relu(self):
        out = ad.relu(Tensor(np.array([1.0, -1.0])))
        np.testing.assert_array_equal(out.values, [1.0, 0.0])

    def test_softmax_no_overflow(self):
        out = ad.softmax(Tensor(np.array([1000.0, 0.0])))
        assert np.all(np.isfinite(out.values))
        assert out.values[0] == pytest.approx(1.0)
        assert out.values.sum() == pytest.approx(1.0, abs=1e-9)

    @given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_softmax_is_probability(self, xs):
        out = ad.softmax(Tensor(np.array(xs)))
        assert np.all(out.values >= 0)
        assert abs(out.values.sum() - 1.0) < 1e-9

    def test_tanh(self):
        x = np.array([-2.0, 0.0, 0.5])
        np.testing.assert_allclose(ad.tanh_act(Tensor(x)).values, np.tanh(x), atol=1e-15)


class TestArithmetic:
    def test_add_zeros(self):
        x = Tensor(np.random.default_rng(3).standard_normal((2, 3)))
        out = ad.add(x, Tensor(np.zeros((2, 3))))
        np.testing.assert_array_equal(out.values, x.values)

    def test_gap_constant(self):
        out = ad.global_avg_pool(Tensor(np.full((3, 2, 2, 2), 7.5)))
        np.testing.assert_allclose(out.values, [7.5] * 3, atol=1e-12)

    def test_mul_elementwise_oracle(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
        out = ad.mul_elementwise(Tensor(a), Tensor(b))
        ref = np.array([[a[i, j] * b[i, j] for j in range(6)] for i in range(2)])
        np.testing.assert_allclose(out.values, ref, atol=1e-12)

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_concat_take_scale(self):
        a = Tensor(np.array([1.0, 2.0]))
        b = Tensor(np.array([3.0]))
        c = ad.concat([a, b])
        np.testing.assert_array_equal(c.values, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(ad.take(c, 2).values, [3.0])
        np.testing.assert_array_equal(ad.scale(a, b).values, [3.0, 6.0])

    def test_flatten_and_reshape(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert ad.flatten(x).shape == (6,)
        assert ad.reshape(x, (3, 2)).shape == (3, 2)
        with pytest.raises(DimensionError):
            ad.reshape(x, (4, 2))

    def test_temporal_subsample(self):
        x = Tensor(np.arange(2 * 5 * 1 * 1.0).reshape(2, 5, 1, 1))
        out = ad.temporal_subsample(x, 2)
        assert out.shape == (2, 3, 1, 1)
        np.testing.assert_array_equal(out.values[0, :, 0, 0], [0.0, 2.0, 4.0])


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(5).standard_normal((3, 4)), requires_grad=True)
        ad.backward(ad.scalar_sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_relu_subgradient(self):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        ad.backward(ad.scalar_sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [1.0, 0.0])

    def test_two_losses_add_linearly(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal(5)
        w = rng.standard_normal(5)

        def grads_of(build):
            x = Tensor(v.copy(), requires_grad=True)
            ad.backward(build(x))
            return x.grad

        g1 = grads_of(lambda x: ad.scalar_sum(ad.mul_elementwise(x, Tensor(w))))
        g2 = grads_of(lambda x: ad.scalar_sum(ad.relu(x)))
        g_sum = grads_of(lambda x: ad.add(
            ad.scalar_sum(ad.mul_elementwise(x, Tensor(w))),
            ad.scalar_sum(ad.relu(x))))
        np.testing.assert_allclose(g_sum, g1 + g2, atol=1e-12)

    def test_backward_accumulates(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        loss = ad.scalar_sum(x)
        ad.backward(loss)
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(UsageError):
            ad.backward(ad.relu(x))

    def test_branching_graph(self):
        # gradient through a node consumed twice: d/dx sum(x*x + x) = 2x + 1
        x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
        ad.backward(ad.add(ad.scalar_sum(ad.mul_elementwise(x, x)), ad.scalar_sum(x)))
        np.testing.assert_allclose(x.grad, 2 * x.values + 1, atol=1e-12)


class TestGradCheck:
    def test_sum_of_squares(self):
        point = Tensor(np.random.default_rng(7).standard_normal(6))
        err = ad.grad_check(lambda x: ad.scalar_sum(ad.mul_elementwise(x, x)), point)
        assert err < 1e-8

    def test_linear_layer(self):
        rng = np.random.default_rng(8)
        w = Tensor(rng.standard_normal((4, 6)))
        b = Tensor(rng.standard_normal(4))
        point = Tensor(rng.standard_normal(6))
        err = ad.grad_check(lambda x: ad.scalar_sum(ad.linear(x, w, b)), point)
        assert err < 1e-9

    def test_constant_function(self):
        c = Tensor(np.array([4.0]))
        err = ad.grad_check(lambda x: ad.mul_const(c, 2.0), Tensor(np.ones(3)))
        assert err == 0.0

    @staticmethod
    def _probe(rng, n):
        fixed = Tensor(rng.standard_normal(n))
        return lambda t: ad.scalar_sum(ad.mul_elementwise(t, fixed))

    @pytest.mark.parametrize("name,builder,point_shape,away_from_zero", [
        ("relu", lambda r, p: lambda x: ad.scalar_sum(ad.relu(x)), (7,), True),
        ("tanh", lambda r, p: lambda x: ad.scalar_sum(ad.tanh_act(x)), (7,), False),
        ("softmax", lambda r, p: lambda x: p(ad.softmax(x)), (5,), False),
        ("clamped_log", lambda r, p: lambda x: ad.scalar_sum(ad.clamped_log(x)),
         (6,), "positive"),
        ("gap", lambda r, p: lambda x: p(ad.global_avg_pool(x)), (2, 3, 2, 2), False),
        ("subsample", lambda r, p: lambda x: ad.scalar_sum(ad.temporal_subsample(x, 2)),
         (2, 5, 2, 2), False),
        ("scale", lambda r, p: lambda x: ad.scalar_sum(
            ad.scale(x, Tensor(np.array([1.7])))), (5,), False),
        ("take_concat", lambda r, p: lambda x: ad.take(ad.concat([x, x]), 3), (4,), False),
        ("mul_const", lambda r, p: lambda x: ad.scalar_sum(ad.mul_const(x, -2.5)), (5,), False),
    ])
    def test_op_gradients(self, name, builder, point_shape, away_from_zero):
        rng = np.random.default_rng(hash(name) % 2**32)
        probe_size = {"softmax": 5, "gap": 2}.get(name, 1)
        f = builder(rng, self._probe(rng, probe_size))
        for trial in range(3):
            sample = rng.standard_normal(point_shape)
            if away_from_zero == "positive":
                sample = np.abs(sample) + 0.5
            elif away_from_zero:
                sample = np.where(np.abs(sample) < 0.2, np.sign(sample) + 0.5, sample)
            assert ad.grad_check(f, Tensor(sample)) < 1e-4, f"{name} trial {trial}"

    def test_conv3d_gradients_all_arguments(self):
        rng = np.random.default_rng(9)
        xv = rng.standard_normal((2, 4, 3, 3))
        kv = rng.standard_normal((2, 2, 3, 3, 3))
        bv = rng.standard_normal(2)
        probe = Tensor(rng.standard_normal((2, 2, 2, 2)))

        def out_sum(x, k, b):
            return ad.scalar_sum(ad.mul_elementwise(
                ad.conv3d(x, k, b, stride=2, padding=1), probe))

        assert ad.grad_check(lambda x: out_sum(x, Tensor(kv), Tensor(bv)), Tensor(xv)) < 1e-4
        assert ad.grad_check(lambda k: out_sum(Tensor(xv), k, Tensor(bv)), Tensor(kv)) < 1e-4
        assert ad.grad_check(lambda b: out_sum(Tensor(xv), Tensor(kv), b), Tensor(bv)) < 1e-4

    def test_linear_gradients_all_arguments(self):
        rng = np.random.default_rng(10)
        xv, wv, bv = rng.standard_normal(5), rng.standard_normal((3, 5)), rng.standard_normal(3)
        probe = Tensor(rng.standard_normal(3))

        def out_sum(x, w, b):
            return ad.scalar_sum(ad.mul_elementwise(ad.linear(x, w, b), probe))

        assert ad.grad_check(lambda x: out_sum(x, Tensor(wv), Tensor(bv)), Tensor(xv)) < 1e-9
        assert ad.grad_check(lambda w: out_sum(Tensor(xv), w, Tensor(bv)), Tensor(wv)) < 1e-9
        assert ad.grad_check(lambda b: out_sum(Tensor(xv), Tensor(wv), b), Tensor(bv)) < 1e-9
