"""
Spectral normalization by persistent power iteration
"""

import logging
from typing import Optional, Tuple

import numpy as np

from services.neural.parameter import Parameter

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    return vector / max(norm, SIGMA_FLOOR)


def power_iteration(matrix: np.ndarray, u: np.ndarray, n_iters: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Run `n_iters` updates of u, then derive v and sigma = u^T W v.

    Returns:
        (u, v, sigma) with sigma floored at 1e-12
    """
    matrix = matrix.astype(np.float64)
    u = u.astype(np.float64)
    for _ in range(n_iters):
        v = _unit(matrix.T @ u)
        u = _unit(matrix @ v)
    v = _unit(matrix.T @ u)
    sigma = max(float(u @ matrix @ v), SIGMA_FLOOR)
    return u, v, sigma


def spectral_normalize(param: Parameter, n_power_iters: int = 1) -> np.ndarray:
    """
    Effective weight W / sigma; u is updated in place.

    Stores sigma and v on the parameter for `spectral_backward`.
    """
    u, v, sigma = power_iteration(param.matrix(), param.u, n_power_iters)
    if n_power_iters:
        param.u = u.astype(np.float32)
    param.sigma = sigma
    param.v_vec = v
    param.u_vec = u
    return (param.value / np.float32(sigma)).astype(np.float32)


def spectral_backward(param: Parameter, grad_effective: np.ndarray) -> np.ndarray:
    """
    Map dL/d(W/sigma) to dL/dW with u and v held constant:
    dW = (G - <G, W/sigma> u v^T) / sigma
    """
    sigma = param.sigma
    g = grad_effective.reshape(grad_effective.shape[0], -1).astype(np.float64)
    w_eff = param.matrix().astype(np.float64) / sigma
    inner = float(np.sum(g * w_eff))
    grad = (g - inner * np.outer(param.u_vec, param.v_vec)) / sigma
    return grad.reshape(param.value.shape).astype(np.float32)


def spectral_sigma(weight: np.ndarray, u: Optional[np.ndarray] = None, n_iters: int = 20, seed: int = 0) -> float:
    """Largest singular value estimate of a weight reshaped to (rows, rest)"""
    matrix = np.asarray(weight, dtype=np.float64).reshape(weight.shape[0], -1)
    if u is None:
        u = _unit(np.random.default_rng(seed).standard_normal(matrix.shape[0]))
    return power_iteration(matrix, u, n_iters)[2]
