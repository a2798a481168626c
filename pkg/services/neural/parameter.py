"""
Trainable parameter with gradient, Adam moments and optional spectral state
"""

from typing import Optional

import numpy as np

from services.exceptions import ShapeError


class Parameter:
    """Named float32 weight tensor; every state array shares its shape except `u`"""

    def __init__(self, name: str, value: np.ndarray, spectral: bool = False, rng: Optional[np.random.Generator] = None):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.u: Optional[np.ndarray] = None
        # Last power-iteration result, consumed by the spectral backward
        self.sigma: float = 1.0
        self.u_vec: Optional[np.ndarray] = None
        self.v_vec: Optional[np.ndarray] = None
        if spectral:
            rng = rng or np.random.default_rng(0)
            u = rng.standard_normal(self.value.shape[0])
            self.u = (u / np.linalg.norm(u)).astype(np.float32)

    @property
    def spectral(self) -> bool:
        return self.u is not None

    @property
    def shape(self):
        return self.value.shape

    def matrix(self) -> np.ndarray:
        """Weight reshaped to (rows, rest)"""
        return self.value.reshape(self.value.shape[0], -1)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.value.shape:
            raise ShapeError(f"gradient for {self.name} has shape {grad.shape}, expected {self.value.shape}")
        self.grad += grad.astype(np.float32, copy=False)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape}, spectral={self.spectral})"
