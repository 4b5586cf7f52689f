"""Synthetic rectified stereo pairs with exact integer ground truth.

Scenes are stacks of fronto-parallel layers over a background plane, each
carrying a seeded per-pixel random texture.  The right view paints the same
layers shifted left by their disparities (painter's order, near over far),
so photometric identity left[y, x] == right[y, x - d(y, x)] holds exactly on
valid pixels.  Validity excludes pixels whose match falls outside the right
image and pixels occluded by a nearer layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import DTYPE


@dataclass(frozen=True)
class Layer:
    """Axis-aligned textured rectangle [y0:y1, x0:x1) at integer disparity."""

    y0: int
    x0: int
    y1: int
    x1: int
    disparity: int

    def __post_init__(self):
        if self.y1 <= self.y0 or self.x1 <= self.x0:
            raise ValueError(f"empty layer rectangle {self}")
        if self.disparity < 0:
            raise ValueError(f"layer disparity must be >= 0, got {self.disparity}")


@dataclass(frozen=True)
class SceneSpec:
    """Image size, background disparity, and far-to-near layer stack."""

    height: int
    width: int
    background_disparity: int = 0
    layers: tuple[Layer, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.height < 16 or self.width < 16:
            raise ValueError(f"scene must be at least 16x16, got {self.height}x{self.width}")
        cap = self.width // 4
        disparities = [self.background_disparity] + [l.disparity for l in self.layers]
        for d in disparities:
            if not 0 <= d <= cap:
                raise ValueError(
                    f"disparity {d} outside [0, {cap}] (width/4 cap) for width {self.width}")
        for a, b in zip(disparities, disparities[1:]):
            if b <= a:
                raise ValueError(
                    "layers must be ordered far to near with strictly increasing disparity")
        for layer in self.layers:
            if layer.y1 > self.height or layer.x1 > self.width or layer.y0 < 0 or layer.x0 < 0:
                raise ValueError(f"layer {layer} exceeds the {self.height}x{self.width} image")


def synth_scene(spec: SceneSpec):
    """Render (left, right, d_gt, valid) for the scene.

    Images are (3, H, W) floats in [0, 1] quantized to 8-bit steps so a PNG
    round trip is exact; d_gt is the full-resolution left-view disparity and
    valid its usability mask.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    bg_d = spec.background_disparity
    left = np.zeros((h, w, 3), dtype=np.uint8)
    right = np.zeros((h, w, 3), dtype=np.uint8)
    d_left = np.zeros((h, w), dtype=DTYPE)
    d_right = np.full((h, w), -1.0, dtype=DTYPE)

    # background texture extends past the right edge so every right-view
    # pixel is covered even after the shift
    bg_tex = rng.integers(0, 256, size=(h, w + bg_d, 3), dtype=np.uint8)
    left[:, :, :] = bg_tex[:, :w]
    d_left[:, :] = bg_d
    right[:, :, :] = bg_tex[:, bg_d:bg_d + w]
    d_right[:, :] = bg_d

    for layer in spec.layers:
        tex = rng.integers(0, 256, size=(layer.y1 - layer.y0,
                                         layer.x1 - layer.x0, 3), dtype=np.uint8)
        left[layer.y0:layer.y1, layer.x0:layer.x1] = tex
        d_left[layer.y0:layer.y1, layer.x0:layer.x1] = layer.disparity
        xr0 = layer.x0 - layer.disparity
        xr1 = layer.x1 - layer.disparity
        src0 = max(0, -xr0)
        xr0 = max(xr0, 0)
        if xr1 > xr0:
            right[layer.y0:layer.y1, xr0:xr1] = tex[:, src0:src0 + (xr1 - xr0)]
            d_right[layer.y0:layer.y1, xr0:xr1] = layer.disparity

    cols = np.arange(w)
    match = cols[None, :] - d_left.astype(np.int64)
    in_range = match >= 0
    surface = np.zeros((h, w), dtype=DTYPE)
    rows = np.repeat(np.arange(h)[:, None], w, axis=1)
    surface[in_range] = d_right[rows[in_range], match[in_range]]
    valid = in_range & (surface == d_left)

    to_float = lambda img: np.ascontiguousarray(
        img.transpose(2, 0, 1).astype(DTYPE) / 255.0)
    return to_float(left), to_float(right), d_left, valid


def quarter_ground_truth(d_gt: np.ndarray, valid: np.ndarray,
                         factor: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Reduce full-res ground truth to the quarter grid.

    Block values are averaged and divided by the factor (disparity in
    quarter-res pixel units); blocks that mix disparities or contain any
    invalid pixel are masked out.
    """
    h, w = d_gt.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {d_gt.shape} not divisible by {factor}")
    blocks = d_gt.reshape(h // factor, factor, w // factor, factor)
    vblocks = valid.reshape(h // factor, factor, w // factor, factor)
    gt_q = blocks.mean(axis=(1, 3)) / factor
    uniform = blocks.max(axis=(1, 3)) == blocks.min(axis=(1, 3))
    return gt_q, vblocks.all(axis=(1, 3)) & uniform
