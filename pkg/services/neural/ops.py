"""
Differentiable numpy kernels for the fixed operator set of the normalization networks.

Tensors are (N, C, D, H, W) arrays, W fastest. Each forward returns `(out, cache)`
and the matching backward consumes `(dout, cache)`. Kernels preserve the input
dtype so gradient checks can run in float64.
"""

from itertools import product
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from services.exceptions import ShapeError

Triple = Union[int, Sequence[int]]


def as_triple(value: Triple, name: str) -> Tuple[int, int, int]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ShapeError(f"{name} needs 3 components, got {value}")
    return value


# ============ CONVOLUTION ============

def conv3d_output_dims(in_dims, kernel, stride, padding) -> Tuple[int, int, int]:
    return tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(in_dims, kernel, stride, padding))


def conv3d_forward(
    x: np.ndarray,
    w: np.ndarray,
    b: Optional[np.ndarray] = None,
    stride: Triple = 1,
    padding: Triple = 0,
):
    """
    3D cross-correlation with zero padding.

    Accumulates one matrix product per kernel offset, so memory stays at the
    size of the output rather than a full im2col buffer.

    Args:
        x: (N, Cin, D, H, W)
        w: (Cout, Cin, kd, kh, kw)
        b: (Cout,) or None
        stride, padding: int or per-axis (d, h, w)

    Returns:
        (out (N, Cout, Do, Ho, Wo), cache)
    """
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d needs 5D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    stride = as_triple(stride, 'stride')
    padding = as_triple(padding, 'padding')
    kernel = w.shape[2:]
    out_dims = conv3d_output_dims(x.shape[2:], kernel, stride, padding)
    if min(out_dims) < 1 or min(stride) < 1 or min(padding) < 0:
        raise ShapeError(f"conv3d output dims {out_dims} invalid for input {x.shape[2:]}, kernel {kernel}")

    pd, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))) if any(padding) else x
    cout = w.shape[0]
    acc = np.zeros((cout, x.shape[0]) + out_dims, dtype=np.result_type(x, w))
    for offset in product(*(range(k) for k in kernel)):
        window = _window(xp, offset, stride, out_dims)
        acc += np.tensordot(w[(slice(None), slice(None)) + offset], window, axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3, 4)
    if b is not None:
        out = out + b.reshape(1, cout, 1, 1, 1)
    cache = (xp, w, stride, padding, x.shape, out_dims)
    return np.ascontiguousarray(out), cache


def _window(xp: np.ndarray, offset, stride, out_dims) -> np.ndarray:
    index = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_dims))
    return xp[(slice(None), slice(None)) + index]


def conv3d_backward(dout: np.ndarray, cache):
    """
    Returns:
        (dx, dw, db) with the shapes of x, w and the bias
    """
    xp, w, stride, padding, x_shape, out_dims = cache
    kernel = w.shape[2:]
    dxp = np.zeros(xp.shape, dtype=np.result_type(dout, w))
    dw = np.zeros(w.shape, dtype=np.result_type(dout, xp))
    db = dout.sum(axis=(0, 2, 3, 4))
    for offset in product(*(range(k) for k in kernel)):
        window = _window(xp, offset, stride, out_dims)
        dw[(slice(None), slice(None)) + offset] = np.tensordot(dout, window, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        grad = np.tensordot(w[(slice(None), slice(None)) + offset], dout, axes=([0], [1]))
        index = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_dims))
        dxp[(slice(None), slice(None)) + index] += grad.transpose(1, 0, 2, 3, 4)
    pd, ph, pw = padding
    _, _, d, h, wd = x_shape
    dx = dxp[:, :, pd:pd + d, ph:ph + h, pw:pw + wd]
    return np.ascontiguousarray(dx), dw, db


# ============ ACTIVATIONS ============

def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def leaky_relu_forward(x: np.ndarray, slope: float):
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky slope must lie in [0, 1), got {slope}")
    scale = np.where(x >= 0, 1.0, slope).astype(x.dtype)
    return x * scale, scale


def leaky_relu_backward(dout: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return dout * scale


# ============ Z SHUFFLE ============

def z_upshuffle(x: np.ndarray) -> np.ndarray:
    """(N, 2C, D, H, W) -> (N, C, 2D, H, W); channel 2c+r lands on depth 2d+r"""
    n, c2, d, h, w = x.shape
    if c2 % 2:
        raise ShapeError(f"z_upshuffle needs an even channel count, got {c2}")
    c = c2 // 2
    return np.ascontiguousarray(x.reshape(n, c, 2, d, h, w).transpose(0, 1, 3, 2, 4, 5).reshape(n, c, 2 * d, h, w))


def z_downshuffle(x: np.ndarray) -> np.ndarray:
    """Inverse of z_upshuffle, also its backward"""
    n, c, d2, h, w = x.shape
    if d2 % 2:
        raise ShapeError(f"z_downshuffle needs an even depth, got {d2}")
    d = d2 // 2
    return np.ascontiguousarray(x.reshape(n, c, d, 2, h, w).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * c, d, h, w))


# ============ HEAD ============

def global_avg_pool_forward(x: np.ndarray):
    return x.mean(axis=(2, 3, 4)), x.shape


def global_avg_pool_backward(dout: np.ndarray, shape) -> np.ndarray:
    n, c, d, h, w = shape
    return np.broadcast_to((dout / (d * h * w)).reshape(n, c, 1, 1, 1), shape).astype(dout.dtype)


def linear_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None):
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear expects (N, {w.shape[1]}) input, got {x.shape}")
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, (x, w)


def linear_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# ============ LOSSES ============

def l1_loss(a: np.ndarray, b: np.ndarray):
    """
    Mean absolute difference.

    Returns:
        (loss, grad with respect to a); the subgradient is 0 at exact ties
    """
    if a.shape != b.shape:
        raise ShapeError(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.abs(diff).mean()), (np.sign(diff) / diff.size).astype(a.dtype)
