"""Dense-array primitives shared by every stage of the engine.

Arrays are plain C-contiguous float64 ndarrays: maps are (h, w), feature
stacks (c, h, w), correlation volumes (h, w, w').  The last dimension is the
fastest-varying one, so lookups along the displacement axis are stride-1.
"""

from __future__ import annotations

import numpy as np

from . import kernels

DTYPE = np.float64


def as_map(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=DTYPE)


def bilinear_sample_last(volume: np.ndarray, indexes: np.ndarray) -> np.ndarray:
    """Sample ``volume`` along its last axis at real-valued positions.

    Each output value linearly interpolates the two nearest entries;
    positions outside [0, size-1] read zeros, so a sample at -0.5 gets half
    of the first entry and a sample at size-0.5 half of the last.
    """
    volume = np.asarray(volume, dtype=DTYPE)
    indexes = np.asarray(indexes, dtype=DTYPE)
    if volume.ndim != 3 or indexes.ndim != 3:
        raise ValueError(
            f"expected 3-d volume and indexes, got {volume.shape} and {indexes.shape}")
    if volume.shape[:2] != indexes.shape[:2]:
        raise ValueError(
            f"volume {volume.shape[:2]} and indexes {indexes.shape[:2]} "
            "disagree on the leading dimensions")
    return kernels.sample_last(np.ascontiguousarray(volume),
                               np.ascontiguousarray(indexes))


def avg_pool_last(volume: np.ndarray) -> np.ndarray:
    """Halve the last axis by non-overlapping pairwise means.

    An odd trailing element is dropped (floor-window semantics).
    """
    volume = np.asarray(volume, dtype=DTYPE)
    size = volume.shape[-1]
    if size < 2:
        raise ValueError(f"last dimension must be >= 2 to pool, got {size}")
    half = size // 2
    return (volume[..., 0:2 * half:2] + volume[..., 1:2 * half:2]) / 2.0


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                   stride: int = 1, pad: int = 0) -> np.ndarray:
    """Standard cross-correlation with zero padding.

    ``x`` is (c_in, h, w), ``kernel`` (c_out, c_in, kh, kw) with odd kh/kw,
    ``bias`` (c_out,).  Output spatial size is
    floor((h + 2*pad - kh)/stride) + 1 per axis.
    """
    x = np.asarray(x, dtype=DTYPE)
    kernel = np.asarray(kernel, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError(f"expected (c,h,w) input and 4-d kernel, got {x.shape}, {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel spatial dims must be odd, got {kh}x{kw}")
    if cin != x.shape[0]:
        raise ValueError(f"kernel expects {cin} input channels, input has {x.shape[0]}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    ho = (x.shape[1] + 2 * pad - kh) // stride + 1
    wo = (x.shape[2] + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(
            f"non-positive output size {ho}x{wo} for input {x.shape[1]}x{x.shape[2]}")
    return kernels.conv2d(x, kernel, bias, stride, pad)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _axis_weights(src: int, dst: int):
    if src == 1 or dst == 1:
        i0 = np.zeros(dst, dtype=np.int64)
        return i0, i0.copy(), np.zeros(dst, dtype=DTYPE)
    pos = np.arange(dst, dtype=DTYPE) * ((src - 1) / (dst - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), src - 2)
    return i0, i0 + 1, pos - i0


def resize_bilinear(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize (c, h, w) to (c, H, W) with corner-aligned bilinear weights."""
    x = np.asarray(x, dtype=DTYPE)
    hh, ww = size
    y0, y1, ay = _axis_weights(x.shape[1], hh)
    x0, x1, ax = _axis_weights(x.shape[2], ww)
    rows = x[:, y0, :] * (1.0 - ay)[None, :, None] + x[:, y1, :] * ay[None, :, None]
    return rows[:, :, x0] * (1.0 - ax) + rows[:, :, x1] * ax
