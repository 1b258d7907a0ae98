"""Dense array kernels used by the layers: matmul, 2-D convolution and
max-pooling with their adjoints, and seeded parameter initialisation.

Arrays are plain ``numpy.ndarray`` objects, row-major, images in NCHW.
Every kernel preserves the floating dtype of its inputs (float32 by
default, float64 for verification runs) and refuses to return
non-finite values.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DivergenceError

DEFAULT_DTYPE = np.float32


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; the same seed yields a bit-identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


def _finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"{op} produced non-finite values")
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _finite(a @ b, "matmul")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise DimensionError(
            f"conv: extent {size} with kernel {k}, stride {stride}, pad {pad} "
            "does not give an integral output size"
        )
    return span // stride + 1


def _patches(x, kh, kw, stride, pad):
    """(B, H', W', C*kh*kw) matrix of input patches."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * kh * kw)


def _check_conv(x_shape, k_shape, stride, pad):
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise DimensionError("conv2d expects NCHW input and OCkk kernel")
    if x_shape[1] != k_shape[1]:
        raise DimensionError(
            f"conv2d: input has {x_shape[1]} channels, kernel expects {k_shape[1]}"
        )
    ho = conv_output_size(x_shape[2], k_shape[2], stride, pad)
    wo = conv_output_size(x_shape[3], k_shape[3], stride, pad)
    return ho, wo


def conv2d(x: np.ndarray, k: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding (deep-learning convention)."""
    _check_conv(x.shape, k.shape, stride, pad)
    cols = _patches(x, k.shape[2], k.shape[3], stride, pad)
    out = cols @ k.reshape(k.shape[0], -1).T
    return _finite(np.ascontiguousarray(out.transpose(0, 3, 1, 2)), "conv2d")


def conv2d_grad_kernel(dy: np.ndarray, x: np.ndarray, kernel_shape, stride: int = 1,
                       pad: int = 0) -> np.ndarray:
    ho, wo = _check_conv(x.shape, kernel_shape, stride, pad)
    if dy.shape != (x.shape[0], kernel_shape[0], ho, wo):
        raise DimensionError(f"conv2d_grad_kernel: dy has shape {dy.shape}")
    cols = _patches(x, kernel_shape[2], kernel_shape[3], stride, pad)
    cols = cols.reshape(-1, cols.shape[-1])
    g = dy.transpose(0, 2, 3, 1).reshape(-1, kernel_shape[0])
    return _finite((g.T @ cols).reshape(kernel_shape), "conv2d_grad_kernel")


def conv2d_grad_input(dy: np.ndarray, k: np.ndarray, input_shape, stride: int = 1,
                      pad: int = 0) -> np.ndarray:
    ho, wo = _check_conv(input_shape, k.shape, stride, pad)
    b, c, h, w = input_shape
    o, _, kh, kw = k.shape
    if dy.shape != (b, o, ho, wo):
        raise DimensionError(f"conv2d_grad_input: dy has shape {dy.shape}")
    g = dy.transpose(0, 2, 3, 1) @ k.reshape(o, -1)
    g = g.reshape(b, ho, wo, c, kh, kw)
    dx = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.result_type(dy, k))
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        dx = dx[:, :, pad:pad + h, pad:pad + w]
    return _finite(np.ascontiguousarray(dx), "conv2d_grad_input")


class PoolIndices(NamedTuple):
    """Flat positions (into the pooled input) of each window maximum."""

    flat: np.ndarray
    input_shape: tuple


def maxpool2d(x: np.ndarray, win: int = 2, stride: int = 2):
    """Window maxima; ties go to the lowest flat index inside the window."""
    if x.ndim != 4:
        raise DimensionError("maxpool2d expects NCHW input")
    b, c, h, w = x.shape
    if h < win or w < win or (h - win) % stride or (w - win) % stride:
        raise DimensionError(f"maxpool2d: {h}x{w} does not tile with window {win}, stride {stride}")
    ho, wo = (h - win) // stride + 1, (w - win) // stride + 1
    windows = sliding_window_view(x, (win, win), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows.reshape(b, c, ho, wo, win * win)
    arg = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    di, dj = np.divmod(arg, win)
    rows = np.arange(ho)[:, None] * stride + di
    cols = np.arange(wo)[None, :] * stride + dj
    plane = (np.arange(b)[:, None] * c + np.arange(c)[None, :])[:, :, None, None]
    flat = (plane * h + rows) * w + cols
    return np.ascontiguousarray(y), PoolIndices(flat, x.shape)


def maxpool2d_grad(dy: np.ndarray, indices: PoolIndices) -> np.ndarray:
    if dy.shape != indices.flat.shape:
        raise DimensionError(f"maxpool2d_grad: dy {dy.shape} vs indices {indices.flat.shape}")
    n = int(np.prod(indices.input_shape))
    dx = np.bincount(indices.flat.ravel(), weights=dy.ravel(), minlength=n)
    return dx.astype(dy.dtype, copy=False).reshape(indices.input_shape)


def kaiming_bound(fan_in: int) -> float:
    return float(np.sqrt(6.0 / fan_in))


def rand_init(shape, scheme: str, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """``kaiming-uniform`` draws U(-b, b) with b = sqrt(6 / fan_in), where
    fan_in is the product of all but the leading extent; ``zeros`` is for
    biases."""
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return np.zeros(shape, dtype=dtype)
    if scheme == "kaiming-uniform":
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        bound = kaiming_bound(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)
    raise ValueError(f"unknown init scheme {scheme!r}")
