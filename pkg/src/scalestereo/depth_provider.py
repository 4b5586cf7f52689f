"""Sources of relative (affine-ambiguous) inverse-depth maps.

Two providers: synthetic perturbations of ground-truth disparity, which
reproduce the region-wise scale inconsistency the scale update exists to
fix, and externally supplied PFM/PNG16 maps (the slot a real monocular
predictor would plug into).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DataFormatError, read_disp_png16, read_pfm_disparity
from .ops import DTYPE


@dataclass(frozen=True)
class DepthEstimate:
    """A nonnegative relative inverse-depth map at quarter resolution."""

    values: np.ndarray
    provenance: str = "external-file"

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=DTYPE)
        if values.ndim != 2:
            raise ValueError(f"depth map must be 2-d, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("depth map contains non-finite values")
        if values.size and values.min() < 0:
            raise ValueError("depth map must be nonnegative")
        object.__setattr__(self, "values", values)

    def quarter(self, h: int, w: int) -> np.ndarray:
        if self.values.shape != (h, w):
            raise ValueError(
                f"depth map shape {self.values.shape} does not match the "
                f"quarter-resolution grid {(h, w)}")
        return self.values


@dataclass(frozen=True)
class RegionScale:
    """Axis-aligned rectangle [y0:y1, x0:x1) with a positive scale."""

    y0: int
    x0: int
    y1: int
    x1: int
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"region scale must be > 0, got {self.scale}")
        if self.y1 <= self.y0 or self.x1 <= self.x0:
            raise ValueError(f"empty region {self}")


@dataclass(frozen=True)
class PerturbSpec:
    """Disjoint rectangles covering the map, a global shift, and a rescale."""

    regions: tuple[RegionScale, ...]
    shift: float = 0.0
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ValueError("perturbation needs at least one region")
        if self.normalization <= 0:
            raise ValueError(f"normalization must be > 0, got {self.normalization}")

    def scale_map(self, shape: tuple[int, int]) -> np.ndarray:
        cover = np.zeros(shape, dtype=np.int32)
        scales = np.zeros(shape, dtype=DTYPE)
        for r in self.regions:
            if r.y1 > shape[0] or r.x1 > shape[1] or r.y0 < 0 or r.x0 < 0:
                raise ValueError(f"region {r} exceeds map shape {shape}")
            cover[r.y0:r.y1, r.x0:r.x1] += 1
            scales[r.y0:r.y1, r.x0:r.x1] = r.scale
        if (cover > 1).any():
            raise ValueError("perturbation regions overlap")
        if (cover == 0).any():
            raise ValueError("perturbation regions do not cover the map")
        return scales


def perturb_depth(d_gt: np.ndarray, spec: PerturbSpec) -> DepthEstimate:
    """Scale ground truth per region, shift, rescale, clamp at zero."""
    d_gt = np.asarray(d_gt, dtype=DTYPE)
    if d_gt.size and d_gt.min() < 0:
        raise ValueError("ground-truth disparity must be nonnegative")
    z = spec.scale_map(d_gt.shape) * d_gt + spec.shift
    z *= spec.normalization
    z = np.maximum(z, 0.0)
    if not z.any():
        raise ValueError("perturbation produced an all-zero depth map")
    return DepthEstimate(z, provenance="synthetic-perturbed")


def block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    h, w = values.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {values.shape} not divisible by block factor {factor}")
    return values.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def depth_from_bytes(data: bytes, quarter_shape: tuple[int, int]) -> DepthEstimate:
    """Decode a PFM or PNG16 payload and reduce it to quarter resolution.

    Non-finite PFM entries (the unknown-pixel convention of ground-truth
    files) read as zero depth.  Maps supplied at an integer multiple of the
    quarter grid are reduced by block averaging (a full-resolution map
    averages 4x4 blocks).
    """
    if data[:2] == b"Pf":
        values, _ = read_pfm_disparity(data)
    else:
        try:
            values, _ = read_disp_png16(data)
        except DataFormatError as exc:
            raise DataFormatError(f"depth map is neither PFM nor 16-bit PNG: {exc}")
    if values.min() < 0:
        raise ValueError("depth map contains negative values")
    qh, qw = quarter_shape
    if values.shape[0] % qh or values.shape[1] % qw:
        raise ValueError(
            f"depth map shape {values.shape} is not an integer multiple of the "
            f"quarter grid {quarter_shape}")
    fy, fx = values.shape[0] // qh, values.shape[1] // qw
    if fy != fx:
        raise ValueError(
            f"depth map shape {values.shape} scales the quarter grid "
            f"{quarter_shape} unevenly ({fy}x vs {fx}x)")
    if fy > 1:
        values = block_mean(values, fy)
    return DepthEstimate(values, provenance="external-file")


def load_external_depth(path, quarter_shape: tuple[int, int]) -> DepthEstimate:
    with open(path, "rb") as fh:
        return depth_from_bytes(fh.read(), quarter_shape)
