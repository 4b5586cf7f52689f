"""All-pairs correlation volume, pooled pyramid, and the two retrieval schemes.

Sign convention: a pixel at column j of the left image matches column
j - d of the right image, so every lookup indexes the volume's last axis at
j minus the candidate displacement.

* Pyramid lookup (PL): for each pyramid level l and offset o in [-r, r],
  sample level l at (j - d) / 2**l + o.  Output is concatenated level-major,
  offsets ascending: num_levels * (2r + 1) values per pixel.
* Scale lookup (SL): for each factor s and delta in (-1, 0, +1), sample the
  finest volume at j - (s * d + delta).  Output is factor-major, deltas
  ascending: 3 * len(factors) values per pixel.

``precompute_lookup_indexes`` builds a :class:`LookupTable` holding the
static offset grids plus reusable position/output buffers, so the per
-iteration hot loop allocates nothing new; results are bit-identical to the
direct path.  ``lookup_allocation_count`` exposes the allocation counter the
tests use to verify that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import LookupConfig
from .encoders import FeaturePair
from .ops import DTYPE, avg_pool_last

SL_DELTAS = (-1.0, 0.0, 1.0)

_lookup_allocations = 0


def lookup_allocation_count() -> int:
    """How many lookup index/position/output arrays were allocated so far."""
    return _lookup_allocations


def _tracked(array: np.ndarray) -> np.ndarray:
    global _lookup_allocations
    _lookup_allocations += 1
    return array


@dataclass(frozen=True)
class CorrelationPyramid:
    """The all-pairs volume plus its last-axis-pooled levels."""

    levels: tuple[np.ndarray, ...]

    @property
    def num_levels(self) -> int:
        return len(self.levels)


def build_correlation(pair: FeaturePair) -> np.ndarray:
    """All-pairs per-row dot products: C[i, j, k] = <f_left[:, i, j], f_right[:, i, k]>."""
    return kernels.corr_volume(np.asarray(pair.f_left, dtype=DTYPE),
                               np.asarray(pair.f_right, dtype=DTYPE))


def build_pyramid(c1: np.ndarray, num_levels: int) -> CorrelationPyramid:
    if num_levels < 1:
        raise ValueError(f"num_levels must be >= 1, got {num_levels}")
    levels = [np.asarray(c1, dtype=DTYPE)]
    for _ in range(num_levels - 1):
        if levels[-1].shape[-1] < 2:
            raise ValueError(
                f"cannot pool below last dimension {levels[-1].shape[-1]}; "
                f"{num_levels} levels is too deep for width {c1.shape[-1]}")
        levels.append(avg_pool_last(levels[-1]))
    return CorrelationPyramid(tuple(levels))


def level_sizes(width: int, num_levels: int) -> list[int]:
    sizes = [width]
    for _ in range(num_levels - 1):
        sizes.append(sizes[-1] // 2)
    return sizes


def max_search_range(cfg: LookupConfig) -> int:
    """Largest full-resolution displacement one pyramid lookup can reach."""
    return 4 * 2 ** (cfg.num_levels - 1) * cfg.radius


class _SampleWorkspace:
    """Scratch buffers for the allocation-free numpy sampling path."""

    def __init__(self, h: int, w: int, kmax: int):
        self.i0f = np.empty((h, w, kmax), dtype=DTYPE)
        self.alpha = np.empty((h, w, kmax), dtype=DTYPE)
        self.i0 = np.empty((h, w, kmax), dtype=np.int64)
        self.ci = np.empty((h, w, kmax), dtype=np.int64)
        self.v0 = np.empty((h, w, kmax), dtype=DTYPE)
        self.v1 = np.empty((h, w, kmax), dtype=DTYPE)
        self.mask = np.empty((h, w, kmax), dtype=bool)
        self.mask2 = np.empty((h, w, kmax), dtype=bool)


def _sample_last_buffered(volume, pos, out, ws: _SampleWorkspace, rowbase) -> None:
    """Same expressions as ``kernels.sample_last_np`` but every intermediate
    lands in a preallocated buffer, so a table-driven lookup performs no
    per-iteration allocation.  Output bits match the direct path exactly.
    """
    size = volume.shape[2]
    i0f = ws.i0f
    alpha = ws.alpha
    i0 = ws.i0
    ci = ws.ci
    v0 = ws.v0
    v1 = ws.v1
    mask = ws.mask
    mask2 = ws.mask2
    flat = volume.reshape(-1)
    np.floor(pos, out=i0f)
    np.subtract(pos, i0f, out=alpha)
    np.copyto(i0, i0f, casting="unsafe")
    for value, shiftd in ((v0, 0), (v1, 1)):
        if shiftd:
            i0 += 1
        np.clip(i0, 0, size - 1, out=ci)
        ci += rowbase
        np.take(flat, ci, out=value)
        np.greater_equal(i0, 0, out=mask)
        np.less(i0, size, out=mask2)
        np.logical_and(mask, mask2, out=mask)
        np.logical_not(mask, out=mask)
        np.copyto(value, 0.0, where=mask)
    np.subtract(1.0, alpha, out=i0f)
    np.multiply(v0, i0f, out=v0)
    np.multiply(v1, alpha, out=v1)
    np.add(v0, v1, out=out)


class LookupTable:
    """Static index structure reused across update iterations.

    Holds the offset/factor grids, preallocated position/output buffers, and
    (on the numpy backend) the gather workspace, so the per-iteration hot
    path allocates nothing.  Returned arrays are owned by the table and
    overwritten by the next lookup that uses it.
    """

    def __init__(self, cfg: LookupConfig, shape: tuple[int, int]):
        h, w = shape
        self.cfg = cfg
        self.shape = (h, w)
        self.jcol = _tracked(np.arange(w, dtype=DTYPE))
        self.pl_offsets = _tracked(np.arange(-cfg.radius, cfg.radius + 1, dtype=DTYPE))
        self.sl_factors = _tracked(np.asarray(cfg.scale_factors, dtype=DTYPE))
        self.sl_deltas = _tracked(np.asarray(SL_DELTAS, dtype=DTYPE))
        self.pl_pos = [_tracked(np.empty((h, w, 2 * cfg.radius + 1), dtype=DTYPE))
                       for _ in range(cfg.num_levels)]
        self.pl_out = _tracked(np.empty((h, w, cfg.pl_samples), dtype=DTYPE))
        self.sl_pos = _tracked(np.empty((h, w, cfg.sl_samples), dtype=DTYPE))
        self.sl_out = _tracked(np.empty((h, w, cfg.sl_samples), dtype=DTYPE))
        self.tmp = _tracked(np.empty((h, w), dtype=DTYPE))
        self.pl_workspace = _SampleWorkspace(h, w, 2 * cfg.radius + 1)
        self.sl_workspace = _SampleWorkspace(h, w, cfg.sl_samples)
        # flattened (row, col) gather bases per pooled level size
        rows = np.arange(h * w, dtype=np.int64).reshape(h, w, 1)
        self.rowbase = {s: _tracked(rows * s)
                        for s in set(level_sizes(w, cfg.num_levels))}

    def check(self, cfg: LookupConfig, shape: tuple[int, int]) -> None:
        if cfg != self.cfg or tuple(shape) != self.shape:
            raise ValueError(
                f"lookup table built for {self.cfg}/{self.shape} used with "
                f"{cfg}/{tuple(shape)}")

    def rowbase_for(self, size: int):
        base = self.rowbase.get(size)
        if base is None:
            base = _tracked(
                np.arange(self.shape[0] * self.shape[1], dtype=np.int64)
                .reshape(self.shape[0], self.shape[1], 1) * size)
            self.rowbase[size] = base
        return base


def precompute_lookup_indexes(cfg: LookupConfig, shape: tuple[int, int]) -> LookupTable:
    """Build the static per-shape lookup structure (the per-call fast path)."""
    return LookupTable(cfg, shape)


def _fill_pl_positions(slab: np.ndarray, d: np.ndarray, level: int,
                       offsets: np.ndarray, jcol: np.ndarray) -> None:
    # per element: ((j - d) * 2**-level) + offset, matching the fused kernel
    slab[...] = jcol[None, :, None]
    slab -= d[:, :, None]
    slab *= 0.5 ** level
    slab += offsets


def _fill_sl_positions(slab3: np.ndarray, d: np.ndarray, factor: float,
                       deltas: np.ndarray, jcol: np.ndarray, tmp: np.ndarray) -> None:
    # per element: ((j - s*d) - delta), matching the fused kernel
    np.multiply(d, factor, out=tmp)
    slab3[...] = jcol[None, :, None]
    slab3 -= tmp[:, :, None]
    slab3 -= deltas


def _check_disparity(d: np.ndarray, volume: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=DTYPE)
    if d.shape != volume.shape[:2]:
        raise ValueError(
            f"disparity shape {d.shape} does not match volume rows {volume.shape[:2]}")
    if d.size and d.min() < 0:
        raise ValueError("disparity must be nonnegative")
    return d


def pyramid_lookup(pyr: CorrelationPyramid, d: np.ndarray, cfg: LookupConfig,
                   table: LookupTable | None = None) -> np.ndarray:
    """Retrieve (h, w, num_levels * (2r+1)) correlation values around d."""
    if pyr.num_levels < cfg.num_levels:
        raise ValueError(
            f"pyramid has {pyr.num_levels} levels, lookup wants {cfg.num_levels}")
    d = _check_disparity(d, pyr.levels[0])
    h, w = d.shape
    k1 = 2 * cfg.radius + 1
    if table is not None:
        table.check(cfg, (h, w))
        offsets, jcol = table.pl_offsets, table.jcol
        pos, out = table.pl_pos, table.pl_out
    else:
        offsets = _tracked(np.arange(-cfg.radius, cfg.radius + 1, dtype=DTYPE))
        jcol = _tracked(np.arange(w, dtype=DTYPE))
        pos = [_tracked(np.empty((h, w, k1), dtype=DTYPE))
               for _ in range(cfg.num_levels)]
        out = _tracked(np.empty((h, w, cfg.pl_samples), dtype=DTYPE))
    for level in range(cfg.num_levels):
        sl = slice(level * k1, (level + 1) * k1)
        volume = pyr.levels[level]
        if table is not None and kernels.BACKEND == "numba":
            kernels.pyramid_slab_nb(volume, d, 0.5 ** level, offsets,
                                    out[:, :, sl])
            continue
        _fill_pl_positions(pos[level], d, level, offsets, jcol)
        if table is not None:
            _sample_last_buffered(volume, pos[level], out[:, :, sl],
                                  table.pl_workspace,
                                  table.rowbase_for(volume.shape[2]))
        elif kernels.BACKEND == "numba":
            kernels.sample_last_nb(volume, pos[level], out[:, :, sl])
        else:
            kernels.sample_last_np(volume, pos[level], out=out[:, :, sl])
    return out


def scale_lookup(c1: np.ndarray, d: np.ndarray, cfg: LookupConfig,
                 table: LookupTable | None = None) -> np.ndarray:
    """Retrieve (h, w, 3 * len(factors)) values at scaled displacements."""
    d = _check_disparity(d, c1)
    h, w = d.shape
    if table is not None:
        table.check(cfg, (h, w))
        factors, deltas, jcol = table.sl_factors, table.sl_deltas, table.jcol
        pos, out, tmp = table.sl_pos, table.sl_out, table.tmp
    else:
        factors = _tracked(np.asarray(cfg.scale_factors, dtype=DTYPE))
        deltas = _tracked(np.asarray(SL_DELTAS, dtype=DTYPE))
        jcol = _tracked(np.arange(w, dtype=DTYPE))
        pos = _tracked(np.empty((h, w, cfg.sl_samples), dtype=DTYPE))
        out = _tracked(np.empty((h, w, cfg.sl_samples), dtype=DTYPE))
        tmp = _tracked(np.empty((h, w), dtype=DTYPE))
    if kernels.BACKEND == "numba" and table is not None:
        kernels.scale_slab_nb(c1, d, factors, deltas, out)
        return out
    for m, factor in enumerate(factors):
        _fill_sl_positions(pos[:, :, 3 * m:3 * m + 3], d, factor, deltas, jcol, tmp)
    if table is not None:
        _sample_last_buffered(c1, pos, out, table.sl_workspace,
                              table.rowbase_for(c1.shape[2]))
    elif kernels.BACKEND == "numba":
        kernels.sample_last_nb(c1, np.ascontiguousarray(pos), out)
    else:
        kernels.sample_last_np(c1, pos, out=out)
    return out
