"""Hot numeric kernels, JIT-compiled with numba plus a pure-numpy fallback.

The backend is selected once at import time from the ``SCALESTEREO_BACKEND``
environment variable (``numba`` or ``numpy``; default ``numba``, falling back
to ``numpy`` when numba is not importable).  ``use_backend`` switches it
temporarily, which the benchmark harness uses to compare both paths in one
process.

The sampling kernels (``sample_last``, the fused lookups) compute the same
floating-point expressions in the same order on both backends and therefore
agree bit for bit.  The matmul-backed kernels (``conv2d``, ``corr_volume``)
and the upsampler use different summation orders per backend and agree to
normal floating-point tolerance instead.
"""

from __future__ import annotations

import math
import os
from contextlib import contextmanager

import numpy as np

ENV_FLAG = "SCALESTEREO_BACKEND"

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    HAS_NUMBA = False


def _initial_backend() -> str:
    choice = os.environ.get(ENV_FLAG, "numba").strip().lower() or "numba"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAS_NUMBA:
        return "numpy"
    return choice


BACKEND = _initial_backend()


def active_backend() -> str:
    return BACKEND


@contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend (for benchmarks and tests)."""
    global BACKEND
    name = name.strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    previous = BACKEND
    BACKEND = name
    try:
        yield
    finally:
        BACKEND = previous


# ---------------------------------------------------------------------------
# linear sampling along the last axis, zero outside [0, size-1]
# ---------------------------------------------------------------------------

def sample_last_np(volume: np.ndarray, pos: np.ndarray, out=None) -> np.ndarray:
    size = volume.shape[2]
    i0f = np.floor(pos)
    alpha = pos - i0f
    i0 = i0f.astype(np.int64)
    i1 = i0 + 1
    v0 = np.take_along_axis(volume, np.clip(i0, 0, size - 1), axis=2)
    v1 = np.take_along_axis(volume, np.clip(i1, 0, size - 1), axis=2)
    v0 = np.where((i0 >= 0) & (i0 < size), v0, 0.0)
    v1 = np.where((i1 >= 0) & (i1 < size), v1, 0.0)
    res = (1.0 - alpha) * v0 + alpha * v1
    if out is None:
        return res
    out[...] = res
    return out


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def sample_last_nb(volume, pos, out):
        h, w, size = volume.shape
        k = pos.shape[2]
        for i in prange(h):
            for j in range(w):
                for t in range(k):
                    p = pos[i, j, t]
                    f = math.floor(p)
                    a = p - f
                    i0 = int(f)
                    v0 = volume[i, j, i0] if 0 <= i0 < size else 0.0
                    i1 = i0 + 1
                    v1 = volume[i, j, i1] if 0 <= i1 < size else 0.0
                    out[i, j, t] = (1.0 - a) * v0 + a * v1


def sample_last(volume: np.ndarray, pos: np.ndarray, out=None) -> np.ndarray:
    if BACKEND == "numba":
        if out is None:
            out = np.empty(pos.shape, dtype=volume.dtype)
        sample_last_nb(volume, pos, out)
        return out
    return sample_last_np(volume, pos, out=out)


# ---------------------------------------------------------------------------
# fused correlation lookups: positions are computed on the fly so the hot
# loop touches no intermediate arrays.  The expressions mirror the numpy
# position-fill helpers in ``correlation`` exactly (same op order), keeping
# the two paths bit-identical.
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def pyramid_slab_nb(volume, d, inv, offsets, out):
        h, w = d.shape
        size = volume.shape[2]
        k = offsets.shape[0]
        for i in prange(h):
            for j in range(w):
                base = (j - d[i, j]) * inv
                for t in range(k):
                    p = base + offsets[t]
                    f = math.floor(p)
                    a = p - f
                    i0 = int(f)
                    v0 = volume[i, j, i0] if 0 <= i0 < size else 0.0
                    i1 = i0 + 1
                    v1 = volume[i, j, i1] if 0 <= i1 < size else 0.0
                    out[i, j, t] = (1.0 - a) * v0 + a * v1

    @njit(cache=True, parallel=True)
    def scale_slab_nb(volume, d, factors, deltas, out):
        h, w = d.shape
        size = volume.shape[2]
        m = factors.shape[0]
        td = deltas.shape[0]
        for i in prange(h):
            for j in range(w):
                for fi in range(m):
                    base = j - factors[fi] * d[i, j]
                    for t in range(td):
                        p = base - deltas[t]
                        f = math.floor(p)
                        a = p - f
                        i0 = int(f)
                        v0 = volume[i, j, i0] if 0 <= i0 < size else 0.0
                        i1 = i0 + 1
                        v1 = volume[i, j, i1] if 0 <= i1 < size else 0.0
                        out[i, j, fi * td + t] = (1.0 - a) * v0 + a * v1


# ---------------------------------------------------------------------------
# 2-D cross-correlation forward pass (conv layers)
# ---------------------------------------------------------------------------

def conv2d_np(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
              stride: int, pad: int) -> np.ndarray:
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (cin, kh, kw, ho, wo), (s0, s1, s2, s1 * stride, s2 * stride))
    out = np.tensordot(weight, cols, axes=([1, 2, 3], [0, 1, 2]))
    out += bias[:, None, None]
    return out


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def conv2d_nb(xp, weight, bias, stride, out):
        cout, cin, kh, kw = weight.shape
        ho = out.shape[1]
        wo = out.shape[2]
        for oc in prange(cout):
            b = bias[oc]
            for oy in range(ho):
                ys = oy * stride
                for ox in range(wo):
                    xs = ox * stride
                    acc = b
                    for ic in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += weight[oc, ic, ky, kx] * xp[ic, ys + ky, xs + kx]
                    out[oc, oy, ox] = acc


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int, pad: int) -> np.ndarray:
    if BACKEND == "numba":
        cin, h, w = x.shape
        cout, _, kh, kw = weight.shape
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        out = np.empty((cout, ho, wo), dtype=x.dtype)
        conv2d_nb(xp, np.ascontiguousarray(weight), bias, stride, out)
        return out
    return conv2d_np(x, weight, bias, stride, pad)


# ---------------------------------------------------------------------------
# all-pairs per-row correlation volume
# ---------------------------------------------------------------------------

def corr_volume_np(flt: np.ndarray, frt: np.ndarray) -> np.ndarray:
    # flt, frt: (h, w, c) row-major transposes of the feature maps
    return np.matmul(flt, np.swapaxes(frt, 1, 2))


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def corr_volume_nb(flt, frt, out):
        h, w, c = flt.shape
        for i in prange(h):
            for j in range(w):
                for k in range(w):
                    acc = 0.0
                    for cc in range(c):
                        acc += flt[i, j, cc] * frt[i, k, cc]
                    out[i, j, k] = acc


def corr_volume(f_left: np.ndarray, f_right: np.ndarray) -> np.ndarray:
    flt = np.ascontiguousarray(f_left.transpose(1, 2, 0))
    frt = np.ascontiguousarray(f_right.transpose(1, 2, 0))
    if BACKEND == "numba":
        h, w, _ = flt.shape
        out = np.empty((h, w, w), dtype=flt.dtype)
        corr_volume_nb(flt, frt, out)
        return out
    return corr_volume_np(flt, frt)


# ---------------------------------------------------------------------------
# convex upsampling (x4) from softmax-weighted 3x3 neighbourhoods
# ---------------------------------------------------------------------------

def convex_upsample_np(d: np.ndarray, logits: np.ndarray) -> np.ndarray:
    h, w = d.shape
    lg = logits.reshape(9, 16, h, w)
    ex = np.exp(lg - lg.max(axis=0))
    wgt = ex / ex.sum(axis=0)
    dp = np.pad(d, 1, mode="edge")
    neigh = np.empty((9, h, w), dtype=d.dtype)
    n = 0
    for dy in range(3):
        for dx in range(3):
            neigh[n] = dp[dy:dy + h, dx:dx + w]
            n += 1
    up = 4.0 * np.einsum("nshw,nhw->shw", wgt, neigh)
    return up.reshape(4, 4, h, w).transpose(2, 0, 3, 1).reshape(4 * h, 4 * w)


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def convex_upsample_nb(d, logits, out):
        h, w = d.shape
        for i in prange(h):
            for j in range(w):
                for di in range(4):
                    for dj in range(4):
                        s = di * 4 + dj
                        m = logits[s, i, j]
                        for n in range(1, 9):
                            v = logits[n * 16 + s, i, j]
                            if v > m:
                                m = v
                        den = 0.0
                        acc = 0.0
                        for n in range(9):
                            e = math.exp(logits[n * 16 + s, i, j] - m)
                            ny = i + n // 3 - 1
                            nx = j + n % 3 - 1
                            if ny < 0:
                                ny = 0
                            elif ny > h - 1:
                                ny = h - 1
                            if nx < 0:
                                nx = 0
                            elif nx > w - 1:
                                nx = w - 1
                            den += e
                            acc += e * d[ny, nx]
                        out[4 * i + di, 4 * j + dj] = 4.0 * acc / den


def convex_upsample(d: np.ndarray, logits: np.ndarray) -> np.ndarray:
    if BACKEND == "numba":
        h, w = d.shape
        out = np.empty((4 * h, 4 * w), dtype=d.dtype)
        convex_upsample_nb(np.ascontiguousarray(d), np.ascontiguousarray(logits), out)
        return out
    return convex_upsample_np(d, logits)


def warmup():
    """Trigger JIT compilation of every numba kernel on tiny inputs."""
    if not HAS_NUMBA:
        return
    vol = np.zeros((2, 3, 4))
    pos = np.zeros((2, 3, 2))
    out = np.zeros((2, 3, 2))
    sample_last_nb(vol, pos, out)
    pyramid_slab_nb(vol, np.zeros((2, 3)), 1.0, np.zeros(2), out)
    scale_slab_nb(vol, np.zeros((2, 3)), np.ones(1), np.array([-1.0, 0.0, 1.0]),
                  np.zeros((2, 3, 3)))
    conv2d_nb(np.zeros((1, 3, 3)), np.zeros((1, 1, 1, 1)), np.zeros(1), 1,
              np.zeros((1, 3, 3)))
    corr_volume_nb(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), np.zeros((2, 3, 3)))
    convex_upsample_nb(np.zeros((2, 3)), np.zeros((144, 2, 3)), np.zeros((8, 12)))
