import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.neural.parameter import Parameter
from services.neural.spectral import power_iteration, spectral_backward, spectral_normalize, spectral_sigma


def jacobi_singular_values(matrix: np.ndarray, sweeps: int = 50) -> np.ndarray:
    """One-sided Jacobi SVD: orthogonalize columns by plane rotations, return sorted norms"""
    a = np.array(matrix, dtype=np.float64)
    if a.shape[0] < a.shape[1]:
        a = a.T
    n = a.shape[1]
    for _ in range(sweeps):
        worst = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = a[:, i] @ a[:, i]
                beta = a[:, j] @ a[:, j]
                gamma = a[:, i] @ a[:, j]
                if alpha == 0.0 or beta == 0.0:
                    continue
                worst = max(worst, abs(gamma) / np.sqrt(alpha * beta))
                if gamma == 0.0:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                left = a[:, i].copy()
                a[:, i] = c * left - s * a[:, j]
                a[:, j] = s * left + c * a[:, j]
        if worst < 1e-13:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]


class TestPowerIteration:
    def test_diagonal(self):
        assert spectral_sigma(np.diag([3.0, 4.0])) == pytest.approx(4.0, rel=1e-6)

    def test_normalized_diagonal(self):
        param = Parameter('w', np.diag([3.0, 4.0]), spectral=True)
        assert_allclose(spectral_normalize(param, 50), np.diag([0.75, 1.0]), atol=1e-5)

    def test_unit_norm_weight_is_fixed_point(self):
        weight = np.diag([1.0, 0.5, 0.25])
        param = Parameter('w', weight, spectral=True)
        assert_allclose(spectral_normalize(param, 50), weight, atol=1e-5)

    def test_jacobi_oracle_agrees(self, rng):
        for shape in [(4, 27), (8, 8), (16, 6)]:
            matrix = rng.standard_normal(shape)
            assert_allclose(jacobi_singular_values(matrix), np.linalg.svd(matrix, compute_uv=False), rtol=1e-8)
            assert spectral_sigma(matrix, n_iters=100) == pytest.approx(jacobi_singular_values(matrix)[0], rel=0.01)

    def test_random_matrices_are_normalized(self, rng):
        for k in range(50):
            rows, cols = rng.integers(2, 12, size=2)
            param = Parameter('w', rng.standard_normal((rows, cols)), spectral=True, rng=np.random.default_rng(k))
            effective = spectral_normalize(param, 50)
            assert 0.95 <= jacobi_singular_values(effective)[0] <= 1.05

    def test_persistent_u_is_updated(self, rng):
        param = Parameter('w', rng.standard_normal((4, 6)), spectral=True)
        before = param.u.copy()
        spectral_normalize(param, 0)
        assert np.array_equal(param.u, before)
        spectral_normalize(param, 1)
        assert not np.array_equal(param.u, before)

    def test_returns_unit_vectors(self, rng):
        u, v, sigma = power_iteration(rng.standard_normal((5, 7)), rng.standard_normal(5), 10)
        assert np.linalg.norm(u) == pytest.approx(1.0)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert sigma > 0


class TestSpectralBackward:
    def test_matches_finite_differences(self, rng):
        weight = rng.standard_normal((4, 6))
        param = Parameter('w', weight, spectral=True)
        spectral_normalize(param, 200)
        g = rng.standard_normal((4, 6))
        analytic = spectral_backward(param, g).astype(np.float64)

        base = param.value.astype(np.float64)

        def objective(w):
            return float(np.sum(g * w / np.linalg.norm(w, 2)))

        numeric = np.zeros_like(base)
        eps = 1e-6
        for index in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[index] += eps
            minus[index] -= eps
            numeric[index] = (objective(plus) - objective(minus)) / (2 * eps)
        assert_allclose(analytic, numeric, rtol=1e-3, atol=1e-4)
