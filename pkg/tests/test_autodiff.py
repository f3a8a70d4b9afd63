import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import check_gradients
from gscomm import autodiff as ad
from gscomm.autodiff import BatchNormState, Parameter, Tensor


class TestConv2d:
    def test_center_value_all_ones(self):
        x = np.ones((1, 3, 3))
        k = np.ones((1, 1, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(k), stride=1, padding=1)
        assert out.data.shape == (1, 3, 3)
        assert out.data[0, 1, 1] == pytest.approx(9.0)

    def test_zero_kernel(self, rng):
        x = rng.random((2, 4, 4))
        out = ad.conv2d(Tensor(x), Tensor(np.zeros((3, 2, 3, 3))), stride=1, padding=1)
        assert np.all(out.data == 0)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError):
            ad.conv2d(Tensor(rng.random((2, 4, 4))), Tensor(rng.random((1, 3, 3, 3))))

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 4, 4))
        k = rng.standard_normal((3, 2, 3, 3))
        check_gradients(
            lambda a, b: ad.conv2d(a, b, stride=1, padding=1).sum(), [x, k]
        )

    def test_gradients_strided(self, rng):
        x = rng.standard_normal((1, 6, 6))
        k = rng.standard_normal((2, 1, 3, 3))
        check_gradients(
            lambda a, b: ad.conv2d(a, b, stride=2, padding=1).sum(), [x, k]
        )


class TestMaxpool2:
    def test_single_window(self):
        out = ad.maxpool2(Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
        assert out.data == pytest.approx(np.array([[[4.0]]]))

    def test_constant_input(self):
        out = ad.maxpool2(Tensor(np.full((2, 4, 4), 7.5)))
        assert np.all(out.data == 7.5)

    def test_odd_extent_rejected(self, rng):
        with pytest.raises(ValueError):
            ad.maxpool2(Tensor(rng.random((1, 3, 4))))

    def test_tie_routes_to_first_row_major(self):
        x = Tensor(np.full((1, 2, 2), 2.0), requires_grad=True)
        ad.maxpool2(x).sum().backward()
        assert x.grad[0, 0, 0] == 1.0
        assert x.grad.sum() == 1.0

    def test_gradients(self, rng):
        # distinct values keep us away from tie points
        x = rng.permutation(16).astype(np.float64).reshape(1, 4, 4)
        check_gradients(lambda a: ad.maxpool2(a).sum(), [x])


class TestAffine:
    def test_identity(self, rng):
        x = rng.random((3, 4))
        out = ad.affine(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        assert out.data == pytest.approx(x)

    def test_zero_weight_gives_bias(self, rng):
        b = rng.random(5)
        out = ad.affine(Tensor(rng.random((3, 4))), Tensor(np.zeros((4, 5))), Tensor(b))
        assert out.data == pytest.approx(np.tile(b, (3, 1)))

    def test_inner_extent_mismatch(self, rng):
        with pytest.raises(ValueError):
            ad.affine(Tensor(rng.random((3, 4))), Tensor(rng.random((5, 2))), Tensor(np.zeros(2)))

    def test_gradients(self, rng):
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        check_gradients(lambda a, ww, bb: ad.affine(a, ww, bb).sum(), [x, w, b])


class TestActivations:
    def test_relu_clamps(self):
        assert ad.relu(Tensor([-1.0])).data == pytest.approx([0.0])

    def test_sigmoid_symmetry(self):
        assert ad.sigmoid(Tensor([0.0])).data == pytest.approx([0.5])

    def test_gradients(self, rng):
        x = rng.standard_normal(12) + 0.05  # keep away from the relu kink
        check_gradients(lambda a: ad.relu(a).sum(), [x])
        check_gradients(lambda a: ad.sigmoid(a).sum(), [x])


class TestNormalize:
    def test_layernorm_closed_form(self):
        out = ad.layernorm(Tensor([1.0, 2.0, 3.0]), eps=1e-12)
        assert out.data == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)

    def test_layernorm_constant_row(self):
        out = ad.layernorm(Tensor([5.0, 5.0, 5.0]))
        assert out.data == pytest.approx([0.0, 0.0, 0.0])

    def test_layernorm_gradients(self, rng):
        x = rng.standard_normal((3, 5))
        w = rng.random((3, 5))
        check_gradients(lambda a: (ad.layernorm(a) * Tensor(w)).sum(), [x])

    def test_batchnorm_gradients(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.random((2, 3, 4, 4))

        def f(a):
            return (ad.batchnorm(a, BatchNormState(3), training=True) * Tensor(w)).sum()

        check_gradients(f, [x])

    def test_batchnorm_eval_uses_running_stats(self, rng):
        state = BatchNormState(2)
        x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
        ad.batchnorm(Tensor(x), state, training=True)
        y = ad.batchnorm(Tensor(x), state, training=False)
        assert not np.allclose(y.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)


class TestSoftmax:
    def test_symmetry(self):
        out = ad.softmax(Tensor([0.0, 0.0]), temperature=3.7)
        assert out.data == pytest.approx([0.5, 0.5])

    def test_sharp_temperature(self):
        out = ad.softmax(Tensor([1.0, 0.0]), temperature=0.1)
        assert out.data == pytest.approx([0.9999546, 0.0000454], abs=1e-7)

    def test_non_positive_temperature(self):
        with pytest.raises(ValueError):
            ad.softmax(Tensor([1.0]), temperature=0.0)

    def test_sums_to_one_100_random(self, rng):
        for _ in range(100):
            x = rng.standard_normal(rng.integers(2, 20)) * 10
            assert abs(ad.softmax(Tensor(x)).data.sum() - 1.0) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=16))
    def test_distribution_property(self, xs):
        y = ad.softmax(Tensor(np.array(xs))).data
        assert np.all(y >= 0)
        assert abs(y.sum() - 1.0) < 1e-12

    def test_gradients(self, rng):
        x = rng.standard_normal(6)
        w = rng.random(6)
        check_gradients(lambda a: (ad.softmax(a, temperature=0.7) * Tensor(w)).sum(), [x])


class TestBilinearResize:
    def test_constant_preserved(self):
        out = ad.bilinear_resize(np.full((2, 2), 3.25), (5, 7))
        assert out == pytest.approx(np.full((5, 7), 3.25))

    def test_degenerate_1x1(self):
        out = ad.bilinear_resize([[4.0]], (3, 3))
        assert out == pytest.approx(np.full((3, 3), 4.0))

    def test_corner_aligned_row(self):
        out = ad.bilinear_resize([[0.0, 1.0], [0.0, 1.0]], (2, 4))
        assert out[0] == pytest.approx([0.0, 1 / 3, 2 / 3, 1.0])


class TestSgdStep:
    def test_single_step(self):
        p = Parameter(np.array([1.0]))
        p.value.grad = np.array([0.5])
        ad.sgd_step([p], lr=0.1)
        assert p.value.data == pytest.approx([0.95])

    def test_non_learnable_unchanged(self):
        p = Parameter(np.array([1.0]), learnable=False)
        p.value.grad = np.array([123.0])
        ad.sgd_step([p], lr=0.1)
        assert p.value.data == pytest.approx([1.0])

    def test_zero_gradient_fixed_point(self):
        p = Parameter(np.array([2.0]))
        p.value.grad = np.array([0.0])
        ad.sgd_step([p], lr=0.1)
        assert p.value.data == pytest.approx([2.0])

    def test_bad_lr(self):
        with pytest.raises(ValueError):
            ad.sgd_step([], lr=0.0)


class TestDeterminism:
    def test_forward_bit_identical(self, rng):
        x = rng.standard_normal((2, 8, 8))
        k = rng.standard_normal((4, 2, 3, 3))
        a = ad.conv2d(Tensor(x), Tensor(k), padding=1).data
        b = ad.conv2d(Tensor(x), Tensor(k), padding=1).data
        assert np.array_equal(a, b)


class TestUpsampleNearest2:
    def test_values(self):
        x = np.arange(4.0).reshape(1, 2, 2)
        out = ad.upsample_nearest2(Tensor(x))
        assert out.data[0, 0, 0] == out.data[0, 0, 1] == out.data[0, 1, 1] == 0.0
        assert out.data.shape == (1, 4, 4)

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 2, 2))
        w = rng.random((2, 4, 4))
        check_gradients(lambda a: (ad.upsample_nearest2(a) * Tensor(w)).sum(), [x])


class TestMaskedFrobeniusNorm:
    def test_value(self, rng):
        x = rng.standard_normal((3, 4, 4))
        m = (rng.random((3, 4, 4)) > 0.5).astype(float)
        out = ad.masked_frobenius_norm(Tensor(x), m)
        assert out.item() == pytest.approx(np.linalg.norm(x * m))

    def test_zero_mask_zero_gradient(self, rng):
        x = Tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)
        ad.masked_frobenius_norm(x, np.zeros((3, 2, 2))).backward()
        assert x.grad is None or np.all(x.grad == 0)

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 3, 3))
        m = (rng.random((2, 3, 3)) > 0.3).astype(float)
        check_gradients(lambda a: ad.masked_frobenius_norm(a, m), [x])
