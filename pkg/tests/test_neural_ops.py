import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import numeric_grad, relative_error
from services.exceptions import ShapeError
from services.neural import ops


class TestConv3d:
    def test_worked_example(self):
        x = np.arange(1, 28, dtype=np.float64).reshape(1, 1, 3, 3, 3)
        w = np.zeros((1, 1, 3, 3, 3))
        w[0, 0, 1, 1, 1] = 1.0
        out, _ = ops.conv3d_forward(x, w, np.array([-1.0]), stride=1, padding=0)
        # center voxel is 14, bias -1
        assert out.shape == (1, 1, 1, 1, 1)
        assert out.item() == 13.0

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 3, 4, 5, 6))
        w = np.zeros((3, 3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1, 1] = 1.0
        out, _ = ops.conv3d_forward(x, w, None, padding=1)
        assert_allclose(out, x)

    def test_output_dims(self, rng):
        x = rng.standard_normal((1, 2, 8, 9, 10)).astype(np.float32)
        w = rng.standard_normal((4, 2, 3, 3, 3)).astype(np.float32)
        out, _ = ops.conv3d_forward(x, w, None, stride=2, padding=1)
        assert out.shape == (1, 4, 4, 5, 5)
        assert out.dtype == np.float32

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ops.conv3d_forward(np.zeros((1, 2, 4, 4, 4)), np.zeros((1, 3, 3, 3, 3)))

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 2, 4, 5, 3))
        w = rng.standard_normal((3, 2, 3, 2, 3))
        b = rng.standard_normal(3)
        stride, padding = (1, 2, 1), (1, 0, 1)
        out, cache = ops.conv3d_forward(x, w, b, stride, padding)
        r = rng.standard_normal(out.shape)
        dx, dw, db = ops.conv3d_backward(r, cache)

        def loss_x(v):
            return float(np.sum(ops.conv3d_forward(v, w, b, stride, padding)[0] * r))

        def loss_w(v):
            return float(np.sum(ops.conv3d_forward(x, v, b, stride, padding)[0] * r))

        def loss_b(v):
            return float(np.sum(ops.conv3d_forward(x, w, v, stride, padding)[0] * r))

        assert relative_error(dx, numeric_grad(loss_x, x.copy())) < 1e-4
        assert relative_error(dw, numeric_grad(loss_w, w.copy())) < 1e-4
        assert relative_error(db, numeric_grad(loss_b, b.copy())) < 1e-4


class TestActivations:
    def test_leaky_relu_values(self):
        out, _ = ops.leaky_relu_forward(np.array([2.0, -1.0, 0.0]), 0.2)
        assert_allclose(out, [2.0, -0.2, 0.0])

    def test_leaky_relu_slope_domain(self):
        with pytest.raises(ValueError):
            ops.leaky_relu_forward(np.zeros(2), 1.0)

    def _away_from_kink(self, rng, shape):
        x = rng.standard_normal(shape)
        return np.where(np.abs(x) < 0.1, 0.5, x)

    def test_leaky_relu_gradient(self, rng):
        x = self._away_from_kink(rng, (3, 4))
        r = rng.standard_normal(x.shape)
        _, scale = ops.leaky_relu_forward(x, 0.2)
        analytic = ops.leaky_relu_backward(r, scale)
        numeric = numeric_grad(lambda v: float(np.sum(ops.leaky_relu_forward(v, 0.2)[0] * r)), x.copy())
        assert relative_error(analytic, numeric) < 1e-6

    def test_relu_gradient(self, rng):
        x = self._away_from_kink(rng, (3, 4))
        r = rng.standard_normal(x.shape)
        _, mask = ops.relu_forward(x)
        numeric = numeric_grad(lambda v: float(np.sum(ops.relu_forward(v)[0] * r)), x.copy())
        assert relative_error(ops.relu_backward(r, mask), numeric) < 1e-6


class TestZShuffle:
    def test_shapes_and_order(self):
        x = np.arange(1 * 4 * 2 * 1 * 1, dtype=np.float64).reshape(1, 4, 2, 1, 1)
        up = ops.z_upshuffle(x)
        assert up.shape == (1, 2, 4, 1, 1)
        # channel 2c+r lands on depth 2d+r
        assert up[0, 0, 1, 0, 0] == x[0, 1, 0, 0, 0]
        assert up[0, 1, 2, 0, 0] == x[0, 2, 1, 0, 0]

    def test_inverse(self, rng):
        x = rng.standard_normal((2, 6, 3, 4, 5))
        assert_array_equal(ops.z_downshuffle(ops.z_upshuffle(x)), x)

    def test_gradient_is_downshuffle(self, rng):
        x = rng.standard_normal((1, 4, 2, 2, 2))
        r = rng.standard_normal((1, 2, 4, 2, 2))
        numeric = numeric_grad(lambda v: float(np.sum(ops.z_upshuffle(v) * r)), x.copy())
        assert relative_error(ops.z_downshuffle(r), numeric) < 1e-6

    def test_odd_sizes(self):
        with pytest.raises(ShapeError):
            ops.z_upshuffle(np.zeros((1, 3, 2, 2, 2)))
        with pytest.raises(ShapeError):
            ops.z_downshuffle(np.zeros((1, 2, 3, 2, 2)))


class TestHeadAndLoss:
    def test_pool_gradient(self, rng):
        x = rng.standard_normal((2, 3, 2, 3, 4))
        r = rng.standard_normal((2, 3))
        _, shape = ops.global_avg_pool_forward(x)
        numeric = numeric_grad(lambda v: float(np.sum(ops.global_avg_pool_forward(v)[0] * r)), x.copy())
        assert relative_error(ops.global_avg_pool_backward(r, shape), numeric) < 1e-6

    def test_linear_gradients(self, rng):
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal((2, 5))
        b = rng.standard_normal(2)
        out, cache = ops.linear_forward(x, w, b)
        r = rng.standard_normal(out.shape)
        dx, dw, db = ops.linear_backward(r, cache)
        assert relative_error(dx, numeric_grad(lambda v: float(np.sum(ops.linear_forward(v, w, b)[0] * r)), x.copy())) < 1e-6
        assert relative_error(dw, numeric_grad(lambda v: float(np.sum(ops.linear_forward(x, v, b)[0] * r)), w.copy())) < 1e-6
        assert_allclose(db, r.sum(axis=0))

    def test_l1_value(self):
        loss, grad = ops.l1_loss(np.array([0.0, 0.0]), np.array([1.0, -1.0]))
        assert loss == 1.0
        assert_allclose(grad, [-0.5, 0.5])

    def test_l1_gradient(self, rng):
        a = rng.standard_normal((2, 3))
        b = a + np.where(rng.random((2, 3)) < 0.5, -1.0, 1.0) * rng.uniform(0.1, 1.0, (2, 3))
        _, grad = ops.l1_loss(a, b)
        numeric = numeric_grad(lambda v: ops.l1_loss(v, b)[0], a.copy())
        assert relative_error(grad, numeric) < 1e-6

    def test_l1_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.l1_loss(np.zeros(2), np.zeros(3))
