"""Stereo error metrics, the supervision loss, and depth-quality analysis."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ops import DTYPE

DEFAULT_THRESHOLDS = (1.0, 2.0, 3.0)


class EmptyEvaluationError(ValueError):
    """No valid pixels to evaluate."""


def _masked(d_pred, d_gt, mask):
    d_pred = np.asarray(d_pred, dtype=DTYPE)
    d_gt = np.asarray(d_gt, dtype=DTYPE)
    if d_pred.shape != d_gt.shape:
        raise ValueError(f"shape mismatch: pred {d_pred.shape} vs gt {d_gt.shape}")
    if mask is None:
        mask = np.ones(d_gt.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d_gt.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {d_gt.shape}")
    if not mask.any():
        raise EmptyEvaluationError("evaluation mask has no valid pixels")
    return d_pred[mask], d_gt[mask], mask


@dataclass(frozen=True)
class MetricReport:
    """End-point error, Bad-N rates, and the 3px/5% outlier rate."""

    epe: float
    bad: dict[float, float]
    d1: float
    valid_pixels: int
    total_pixels: int

    def to_dict(self) -> dict:
        return {
            "epe": self.epe,
            "bad": {f"{t:g}": v for t, v in self.bad.items()},
            "d1": self.d1,
            "valid_pixels": self.valid_pixels,
            "total_pixels": self.total_pixels,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        lines = [f"epe={self.epe:.6f}"]
        for t in sorted(self.bad):
            lines.append(f"bad_{t:g}={self.bad[t]:.6f}")
        lines.append(f"d1={self.d1:.6f}")
        lines.append(f"valid_pixels={self.valid_pixels}")
        lines.append(f"total_pixels={self.total_pixels}")
        return "\n".join(lines)


def compute_metrics(d_pred, d_gt, mask=None,
                    thresholds=DEFAULT_THRESHOLDS) -> MetricReport:
    """EPE plus Bad-N percentages over the valid mask.

    Bad-N counts errors strictly above N pixels; D1 counts errors above both
    3 pixels and 5% of the ground-truth disparity.
    """
    pred, gt, mask_arr = _masked(d_pred, d_gt, mask)
    err = np.abs(pred - gt)
    bad = {float(t): float(100.0 * np.mean(err > t)) for t in thresholds}
    d1 = float(100.0 * np.mean((err > 3.0) & (err > 0.05 * gt)))
    return MetricReport(epe=float(err.mean()), bad=bad, d1=d1,
                        valid_pixels=int(mask_arr.sum()),
                        total_pixels=int(mask_arr.size))


def sequence_loss(preds, d_gt, mask=None, gamma: float = 0.9) -> float:
    """Exponentially weighted sum of per-iteration mean absolute errors.

    Prediction n of N is weighted gamma**(N - n); the masked mean replaces a
    raw L1 sum so the value is resolution-independent.  gamma == 0 scores the
    final prediction only (0**0 == 1).
    """
    if not preds:
        raise ValueError("sequence_loss needs at least one prediction")
    total = 0.0
    n = len(preds)
    for i, pred in enumerate(preds):
        p, g, _ = _masked(pred, d_gt, mask)
        total += float(gamma) ** (n - 1 - i) * float(np.abs(g - p).mean())
    return total


@dataclass(frozen=True)
class AffineFit:
    """Least-squares scale/shift aligning a relative map to ground truth."""

    scale: float
    shift: float
    epe_after: float
    degenerate: bool = False


def affine_align(z, d_gt, mask=None, var_floor: float = 1e-12) -> AffineFit:
    """Closed-form least squares of d_gt ~ scale * z + shift over the mask.

    A (near-)constant z cannot determine a scale: the fit degenerates to
    scale 0 and shift mean(d_gt), flagged on the result.
    """
    zv, gv, _ = _masked(z, d_gt, mask)
    if zv.size < 2:
        raise EmptyEvaluationError("affine alignment needs at least 2 valid pixels")
    zm = zv.mean()
    gm = gv.mean()
    var = np.mean((zv - zm) ** 2)
    if var < var_floor:
        return AffineFit(scale=0.0, shift=float(gm),
                         epe_after=float(np.abs(gv - gm).mean()), degenerate=True)
    scale = float(np.mean((zv - zm) * (gv - gm)) / var)
    shift = float(gm - scale * zm)
    epe = float(np.abs(scale * zv + shift - gv).mean())
    return AffineFit(scale=scale, shift=shift, epe_after=epe, degenerate=False)


def ratio_map_std(d_gt, d_hat, mask=None,
                  clamp_min: float = 0.05) -> tuple[np.ndarray, float]:
    """Per-pixel gt / max(aligned, clamp_min) ratio and its population std.

    A scale-consistent estimate keeps the ratio near 1 everywhere; the
    spread of the ratio over the mask measures region-wise scale drift.
    """
    d_gt = np.asarray(d_gt, dtype=DTYPE)
    d_hat = np.asarray(d_hat, dtype=DTYPE)
    if d_gt.shape != d_hat.shape:
        raise ValueError(f"shape mismatch: gt {d_gt.shape} vs aligned {d_hat.shape}")
    ratio = d_gt / np.maximum(d_hat, clamp_min)
    _, rv, _ = _masked(ratio, ratio, mask)
    return ratio, float(rv.std())
