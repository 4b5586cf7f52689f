"""The recurrent disparity engine.

The loop starts from a depth-derived initialization (eta * w * z / max(z) +
eps), runs ``su_iters`` multiplicative scale updates driven by the scale
lookup, then additive delta updates driven by the pyramid lookup, and convex
-upsamples the quarter-resolution estimate to full resolution after every
iteration.  A non-learned greedy mode replaces the scale head with a per
-pixel argmax over the scale-lookup factor grid, which verifies the lookup
mechanism end to end without training.

Hidden state is a three-level stack (1/4, 1/8, 1/16) updated coarse-to-fine
by convolutional GRUs; lookup features enter only at 1/4, the coarser levels
see context plus resampled adjacent hidden states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import EngineConfig
from .correlation import (CorrelationPyramid, LookupTable, build_correlation,
                          build_pyramid, precompute_lookup_indexes,
                          pyramid_lookup, scale_lookup)
from .dataio import WeightBundle
from .depth_provider import DepthEstimate
from .encoders import ContextSet, conv_layer, encode_context, encode_matching
from .ops import DTYPE, relu, resize_bilinear, sigmoid
from . import kernels

PHASE_SCALE = "su"
PHASE_DELTA = "du"
MODES = ("learned", "oracle")


class PhaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class DisparityState:
    """Quarter-resolution disparity plus the GRU hidden stack."""

    d: np.ndarray
    hidden: tuple[np.ndarray, ...]
    iteration: int = 0
    phase: str = PHASE_SCALE


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    phase: str
    d_before: np.ndarray
    d_after: np.ndarray
    scale: np.ndarray | None = None
    delta: np.ndarray | None = None
    factors: np.ndarray | None = None


@dataclass(frozen=True)
class InferenceResult:
    """Per-iteration full-resolution maps plus the final quarter-res state."""

    disparities: list[np.ndarray]
    quarter: np.ndarray
    trace: list[TraceEntry]

    @property
    def final(self) -> np.ndarray:
        return self.disparities[-1]


def init_disparity(z: np.ndarray, width: int, eta: float, eps: float) -> np.ndarray:
    """Seed the quarter-res disparity from a relative inverse-depth map.

    d0 = eta * width * z / max(z) + eps; a nonpositive maximum (no depth
    signal) degenerates to the constant-eps map.  The max-normalization makes
    the result invariant under positive rescaling of z.
    """
    z = np.asarray(z, dtype=DTYPE)
    zmax = z.max() if z.size else 0.0
    if zmax <= 0:
        return np.full(z.shape, eps, dtype=DTYPE)
    return eta * width * (z / zmax) + eps


def gru_step(hidden: np.ndarray, gate_bias: tuple[np.ndarray, np.ndarray, np.ndarray],
             x: np.ndarray, weights: WeightBundle, prefix: str) -> np.ndarray:
    """One ConvGRU update of ``hidden`` given inputs ``x`` and context biases.

    z = sigmoid(conv([h, x], Wz) + cz), r likewise, candidate
    h~ = tanh(conv([r*h, x], Wh) + ch), new h = (1 - z) * h + z * h~.
    """
    cz, cr, ch = gate_bias
    hx = np.concatenate([hidden, x], axis=0)
    z = sigmoid(conv_layer(hx, weights, f"{prefix}.wz") + cz)
    r = sigmoid(conv_layer(hx, weights, f"{prefix}.wr") + cr)
    rx = np.concatenate([r * hidden, x], axis=0)
    h_cand = np.tanh(conv_layer(rx, weights, f"{prefix}.wh") + ch)
    return (1.0 - z) * hidden + z * h_cand


def _run_gru_stack(hidden: tuple[np.ndarray, ...], context: ContextSet,
                   corr_feat: np.ndarray, d: np.ndarray, weights: WeightBundle,
                   phase: str) -> tuple[np.ndarray, ...]:
    h4, h8, h16 = hidden
    gates = lambda i: (context.gate_z[i], context.gate_r[i], context.gate_h[i])
    x16 = resize_bilinear(h8, h16.shape[1:])
    h16 = gru_step(h16, gates(2), x16, weights, f"{phase}.gru16")
    x8 = np.concatenate([resize_bilinear(h4, h8.shape[1:]),
                         resize_bilinear(h16, h8.shape[1:])], axis=0)
    h8 = gru_step(h8, gates(1), x8, weights, f"{phase}.gru8")
    cf = relu(conv_layer(corr_feat, weights, f"{phase}.enc_corr"))
    df = relu(conv_layer(d[None, :, :], weights, f"{phase}.enc_disp"))
    x4 = np.concatenate([cf, df, resize_bilinear(h8, h4.shape[1:])], axis=0)
    h4 = gru_step(h4, gates(0), x4, weights, f"{phase}.gru4")
    return (h4, h8, h16)


def _head(h4: np.ndarray, weights: WeightBundle, phase: str) -> np.ndarray:
    x = relu(conv_layer(h4, weights, f"{phase}.head.conv1"))
    return conv_layer(x, weights, f"{phase}.head.conv2")[0]


def _corr_to_channels(feat: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(feat.transpose(2, 0, 1))


def scale_update_step(state: DisparityState, c1: np.ndarray, context: ContextSet,
                      weights: WeightBundle, cfg: EngineConfig,
                      table: LookupTable | None = None
                      ) -> tuple[DisparityState, np.ndarray]:
    """Multiplicative refinement d <- max(s * d, eps), s in (1/2, 2).

    The GRU head output is mapped through s = exp(tanh(.) * ln 2), bounding
    each step's scale so compounding stays controlled without training.
    Returns the new state and the predicted scale map.
    """
    if state.phase != PHASE_SCALE:
        raise PhaseError(f"scale update called in phase {state.phase!r}")
    feat = scale_lookup(c1, state.d, cfg.lookup, table)
    hidden = _run_gru_stack(state.hidden, context, _corr_to_channels(feat),
                            state.d, weights, PHASE_SCALE)
    s = np.exp(np.tanh(_head(hidden[0], weights, PHASE_SCALE)) * math.log(2.0))
    d = np.maximum(s * state.d, cfg.eps)
    return replace(state, d=d, hidden=hidden, iteration=state.iteration + 1), s


def delta_update_step(state: DisparityState, pyr: CorrelationPyramid,
                      context: ContextSet, weights: WeightBundle,
                      cfg: EngineConfig, table: LookupTable | None = None
                      ) -> tuple[DisparityState, np.ndarray]:
    """Additive refinement d <- max(d + delta, eps).

    Returns the new state and the predicted delta map.
    """
    if state.phase != PHASE_DELTA:
        raise PhaseError(f"delta update called in phase {state.phase!r}")
    feat = pyramid_lookup(pyr, state.d, cfg.lookup, table)
    hidden = _run_gru_stack(state.hidden, context, _corr_to_channels(feat),
                            state.d, weights, PHASE_DELTA)
    delta = _head(hidden[0], weights, PHASE_DELTA)
    d = np.maximum(state.d + delta, cfg.eps)
    return replace(state, d=d, hidden=hidden, iteration=state.iteration + 1), delta


def _tie_preference_order(factors: tuple[float, ...]) -> list[int]:
    # scan candidates nearest-to-identity first so exact ties keep d unchanged
    return sorted(range(len(factors)), key=lambda m: (abs(math.log(factors[m])), m))


def greedy_scale_step(state: DisparityState, c1: np.ndarray, cfg: EngineConfig,
                      table: LookupTable | None = None
                      ) -> tuple[DisparityState, np.ndarray]:
    """Non-learned oracle: per pixel, apply the factor with the best center
    correlation in its scale-lookup triplet; ties keep the factor nearest 1.
    """
    if state.phase != PHASE_SCALE:
        raise PhaseError(f"greedy scale step called in phase {state.phase!r}")
    feat = scale_lookup(c1, state.d, cfg.lookup, table)
    centers = feat[:, :, 1::3]
    factors = np.asarray(cfg.lookup.scale_factors, dtype=DTYPE)
    order = _tie_preference_order(cfg.lookup.scale_factors)
    best = np.full(state.d.shape, order[0], dtype=np.int64)
    best_val = centers[:, :, order[0]].copy()
    for m in order[1:]:
        better = centers[:, :, m] > best_val
        best[better] = m
        best_val[better] = centers[:, :, m][better]
    chosen = factors[best]
    d = np.maximum(chosen * state.d, cfg.eps)
    return replace(state, d=d, iteration=state.iteration + 1), chosen


def convex_upsample(d: np.ndarray, mask_logits: np.ndarray) -> np.ndarray:
    """Upsample a quarter-res disparity map x4 by softmax-weighted convex
    combinations of edge-clamped 3x3 neighbourhoods, scaling values by 4 to
    convert quarter-res pixel units to full-res units.
    """
    d = np.asarray(d, dtype=DTYPE)
    mask_logits = np.asarray(mask_logits, dtype=DTYPE)
    if d.ndim != 2:
        raise ValueError(f"expected (h, w) disparity, got {d.shape}")
    if mask_logits.shape != (144,) + d.shape:
        raise ValueError(
            f"mask logits must be (144, h, w) = (9*16, {d.shape[0]}, {d.shape[1]}), "
            f"got {mask_logits.shape}")
    return kernels.convex_upsample(d, mask_logits)


def run_inference(left: np.ndarray, right: np.ndarray,
                  depth: DepthEstimate | None, weights: WeightBundle,
                  cfg: EngineConfig, mode: str = "learned") -> InferenceResult:
    """Full pipeline: encode, build the pyramid, initialize from depth, then
    iterate su_iters scale updates followed by delta updates, upsampling
    after every step.

    ``depth=None`` initializes from the degenerate constant-eps map.  Oracle
    mode replaces the learned scale head with the greedy factor argmax and
    requires a pure scale-update schedule (su_iters == total_iters).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "oracle" and cfg.su_iters != cfg.total_iters:
        raise ValueError(
            "oracle mode runs scale updates only; set su_iters == total_iters")
    pair = encode_matching(left, right, weights)
    context = encode_context(left, weights, cfg)
    c1 = build_correlation(pair)
    pyr = build_pyramid(c1, cfg.lookup.num_levels)
    h, w = c1.shape[:2]
    z = np.zeros((h, w), dtype=DTYPE) if depth is None else depth.quarter(h, w)
    d0 = init_disparity(z, w, cfg.eta, cfg.eps)
    table = precompute_lookup_indexes(cfg.lookup, (h, w))
    state = DisparityState(d=d0, hidden=context.hidden0)
    zero_logits = np.zeros((144, h, w), dtype=DTYPE)
    disparities: list[np.ndarray] = []
    trace: list[TraceEntry] = []
    for n in range(cfg.total_iters):
        phase = PHASE_SCALE if n < cfg.su_iters else PHASE_DELTA
        state = replace(state, phase=phase)
        d_before = state.d
        scale = delta = factors = None
        if phase == PHASE_SCALE:
            if mode == "oracle":
                state, factors = greedy_scale_step(state, c1, cfg, table)
            else:
                state, scale = scale_update_step(state, c1, context, weights,
                                                 cfg, table)
        else:
            state, delta = delta_update_step(state, pyr, context, weights,
                                             cfg, table)
        if mode == "learned":
            logits = conv_layer(state.hidden[0], weights, "up.mask")
        else:
            logits = zero_logits
        disparities.append(convex_upsample(state.d, logits))
        trace.append(TraceEntry(iteration=n + 1, phase=phase, d_before=d_before,
                                d_after=state.d, scale=scale, delta=delta,
                                factors=factors))
    return InferenceResult(disparities=disparities, quarter=state.d, trace=trace)
