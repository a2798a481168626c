"""
Layer objects with hand-wired forward/backward passes.

A layer caches what its backward needs during `forward`; call `backward` once
per `forward`. Parameter gradients accumulate until `zero_grad`.
"""

import math
from typing import Iterator, List, Optional, Sequence

import numpy as np

from services.neural import ops
from services.neural.parameter import Parameter
from services.neural.spectral import spectral_backward, spectral_normalize, spectral_sigma


def he_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


class Module:
    """Base class: parameters, children and spectral refresh"""

    def children(self) -> List['Module']:
        return []

    def own_parameters(self) -> List[Parameter]:
        return []

    def parameters(self) -> Iterator[Parameter]:
        yield from self.own_parameters()
        for child in self.children():
            yield from child.parameters()

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def refresh_spectral(self, n_iters: int) -> None:
        """Advance the power iteration of every spectral weight"""
        for child in self.children():
            child.refresh_spectral(n_iters)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv3d(Module):
    """Zero-padded 3D convolution, optionally spectrally normalized"""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size=3,
        stride=1,
        padding=1,
        rng: Optional[np.random.Generator] = None,
        spectral: bool = False,
    ):
        rng = rng or np.random.default_rng(0)
        kernel = ops.as_triple(kernel_size, 'kernel_size')
        fan_in = in_channels * int(np.prod(kernel))
        self.weight = Parameter(
            f"{name}.weight", he_normal(rng, (out_channels, in_channels) + kernel, fan_in), spectral=spectral, rng=rng
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels, dtype=np.float32))
        self.stride = stride
        self.padding = padding
        self._cache = None

    def own_parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def refresh_spectral(self, n_iters: int) -> None:
        if self.weight.spectral:
            spectral_normalize(self.weight, n_iters)

    def effective_weight(self) -> np.ndarray:
        if self.weight.spectral:
            return spectral_normalize(self.weight, 0)
        return self.weight.value

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, self._cache = ops.conv3d_forward(x, self.effective_weight(), self.bias.value, self.stride, self.padding)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = ops.conv3d_backward(dout, self._cache)
        if self.weight.spectral:
            dw = spectral_backward(self.weight, dw)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        return dx


class Linear(Module):
    def __init__(self, name: str, in_features: int, out_features: int, rng=None, spectral: bool = False):
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(
            f"{name}.weight", he_normal(rng, (out_features, in_features), in_features), spectral=spectral, rng=rng
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features, dtype=np.float32))
        self._cache = None

    def own_parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def refresh_spectral(self, n_iters: int) -> None:
        if self.weight.spectral:
            spectral_normalize(self.weight, n_iters)

    def forward(self, x: np.ndarray) -> np.ndarray:
        weight = spectral_normalize(self.weight, 0) if self.weight.spectral else self.weight.value
        out, self._cache = ops.linear_forward(x, weight, self.bias.value)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = ops.linear_backward(dout, self._cache)
        if self.weight.spectral:
            dw = spectral_backward(self.weight, dw)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        return dx


class ReLU(Module):
    def forward(self, x):
        out, self._mask = ops.relu_forward(x)
        return out

    def backward(self, dout):
        return ops.relu_backward(dout, self._mask)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    def forward(self, x):
        out, self._scale = ops.leaky_relu_forward(x, self.slope)
        return out

    def backward(self, dout):
        return ops.leaky_relu_backward(dout, self._scale)


class ZUpShuffle(Module):
    def forward(self, x):
        return ops.z_upshuffle(x)

    def backward(self, dout):
        return ops.z_downshuffle(dout)


class GlobalAvgPool(Module):
    def forward(self, x):
        out, self._shape = ops.global_avg_pool_forward(x)
        return out

    def backward(self, dout):
        return ops.global_avg_pool_backward(dout, self._shape)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def children(self) -> List[Module]:
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class ResBlock(Module):
    """x + res_scale * conv(relu(conv(x)))"""

    def __init__(self, name: str, channels: int, kernel_size: int = 3, res_scale: float = 0.1, rng=None):
        pad = kernel_size // 2
        self.body = Sequential(
            Conv3d(f"{name}.conv1", channels, channels, kernel_size, 1, pad, rng=rng),
            ReLU(),
            Conv3d(f"{name}.conv2", channels, channels, kernel_size, 1, pad, rng=rng),
        )
        self.res_scale = np.float32(res_scale)

    def children(self) -> List[Module]:
        return [self.body]

    def forward(self, x):
        return x + self.res_scale * self.body.forward(x)

    def backward(self, dout):
        return dout + self.body.backward(self.res_scale * dout)


def certify_spectral(model: Module, n_iters: int = 20, seed: int = 0) -> dict:
    """
    Run `n_iters` power iterations on every spectral weight, then estimate the
    largest singular value of each effective weight from a fresh start vector.

    Returns:
        {parameter name: sigma of W / sigma_estimate}
    """
    model.refresh_spectral(n_iters)
    report = {}
    for param in model.parameters():
        if param.spectral:
            effective = spectral_normalize(param, 0)
            report[param.name] = spectral_sigma(effective, n_iters=max(n_iters, 50), seed=seed)
    return report
