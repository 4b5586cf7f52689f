"""Small deterministic CNN encoders and the channel-align-and-add fusion.

Two trunks produce quarter-resolution matching features (shared weights for
both views) and multi-level context maps at 1/4, 1/8, 1/16.  An optional
auxiliary trunk stands in for a foundation-model feature source: its maps are
passed through a 1x1 channel-alignment conv and added to the base maps.

Weight tensors live in a :class:`~scalestereo.dataio.WeightBundle` under the
documented names below (e.g. ``fe.conv1.kernel``), generated from a seeded
uniform(-k, k) scheme with k = 1/sqrt(fan_in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .dataio import WeightBundle
from .ops import DTYPE, conv2d_forward, relu

CONTEXT_LEVELS = (4, 8, 16)


class MissingWeightError(KeyError):
    pass


@dataclass(frozen=True)
class FeaturePair:
    """Quarter-resolution matching feature maps for the two views."""

    f_left: np.ndarray
    f_right: np.ndarray

    def __post_init__(self):
        if self.f_left.shape != self.f_right.shape:
            raise ValueError(
                f"feature maps disagree: {self.f_left.shape} vs {self.f_right.shape}")


@dataclass(frozen=True)
class ContextSet:
    """Context maps, GRU gate biases, and initial hidden states per level."""

    context: tuple[np.ndarray, ...]
    gate_z: tuple[np.ndarray, ...]
    gate_r: tuple[np.ndarray, ...]
    gate_h: tuple[np.ndarray, ...]
    hidden0: tuple[np.ndarray, ...]


def _check_image(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"{name} must be (3, H, W), got {img.shape}")
    if img.shape[1] % 16 or img.shape[2] % 16:
        raise ValueError(
            f"{name} dimensions must be divisible by 16, got {img.shape[1]}x{img.shape[2]}")
    return img


def _fetch(weights: WeightBundle, name: str) -> tuple[np.ndarray, np.ndarray]:
    kname, bname = name + ".kernel", name + ".bias"
    if kname not in weights or bname not in weights:
        raise MissingWeightError(f"bundle is missing {kname!r}/{bname!r}")
    return weights[kname], weights[bname]


def conv_layer(x: np.ndarray, weights: WeightBundle, name: str, stride: int = 1) -> np.ndarray:
    kernel, bias = _fetch(weights, name)
    return conv2d_forward(x, kernel, bias, stride=stride, pad=kernel.shape[2] // 2)


def _trunk(img: np.ndarray, weights: WeightBundle, prefix: str) -> np.ndarray:
    x = relu(conv_layer(img, weights, f"{prefix}.conv1", stride=2))
    x = relu(conv_layer(x, weights, f"{prefix}.conv2", stride=2))
    return conv_layer(x, weights, f"{prefix}.conv3", stride=1)


def _box3(x: np.ndarray) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    acc = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            acc += xp[:, dy:dy + x.shape[1], dx:dx + x.shape[2]]
    return acc / 9.0


def _local_contrast(x: np.ndarray) -> np.ndarray:
    # high-pass then per-pixel unit norm: untrained conv features share a
    # large constant component per channel that would swamp the all-pairs
    # dot products; both steps are pointwise/local, so exact shift
    # covariance of the encoder is preserved.  The norm floor keeps locally
    # constant (featureless) patches at ~zero instead of amplifying
    # rounding noise to unit length.
    x = x - _box3(x)
    norm = np.sqrt((x * x).sum(axis=0, keepdims=True))
    return x / np.maximum(norm, 1e-6)


def fuse_features(base: np.ndarray, aux: np.ndarray,
                  align_kernel: np.ndarray, align_bias: np.ndarray) -> np.ndarray:
    """Channel-align ``aux`` with a 1x1 conv and add it to ``base``."""
    if base.shape[1:] != aux.shape[1:]:
        raise ValueError(
            f"spatial mismatch between base {base.shape[1:]} and aux {aux.shape[1:]}")
    return base + conv2d_forward(aux, align_kernel, align_bias, stride=1, pad=0)


def has_aux_path(weights: WeightBundle) -> bool:
    return "aux.conv1.kernel" in weights


def encode_matching(left: np.ndarray, right: np.ndarray,
                    weights: WeightBundle) -> FeaturePair:
    """Extract shared-weight matching features at 1/4 resolution."""
    left = _check_image(left, "left")
    right = _check_image(right, "right")
    if left.shape != right.shape:
        raise ValueError(f"image shapes differ: {left.shape} vs {right.shape}")
    maps = []
    aux = has_aux_path(weights)
    if aux:
        ak, ab = _fetch(weights, "fuse.align")
    for img in (left, right):
        f = _trunk(img, weights, "fe")
        if aux:
            f = fuse_features(f, _trunk(img, weights, "aux"), ak, ab)
        maps.append(_local_contrast(f))
    return FeaturePair(maps[0], maps[1])


def encode_context(left: np.ndarray, weights: WeightBundle,
                   cfg: EngineConfig) -> ContextSet:
    """Build context maps, gate biases, and initial hidden states.

    Hidden states start at zero unless the bundle carries ``ctx.init{L}``
    heads, in which case they are tanh-activated conv outputs of the context.
    """
    left = _check_image(left, "left")
    c4 = _trunk(left, weights, "ctx")
    c8 = conv_layer(relu(c4), weights, "ctx.down8", stride=2)
    c16 = conv_layer(relu(c8), weights, "ctx.down16", stride=2)
    levels = [c4, c8, c16]
    if "ctxaux.conv1.kernel" in weights:
        a4 = _trunk(left, weights, "ctxaux")
        a8 = conv_layer(relu(a4), weights, "ctxaux.down8", stride=2)
        a16 = conv_layer(relu(a8), weights, "ctxaux.down16", stride=2)
        for i, (lv, a) in enumerate(zip(CONTEXT_LEVELS, (a4, a8, a16))):
            ak, ab = _fetch(weights, f"ctx.align{lv}")
            levels[i] = fuse_features(levels[i], a, ak, ab)
    gz, gr, gh, h0 = [], [], [], []
    for lv, ctx in zip(CONTEXT_LEVELS, levels):
        g = relu(ctx)
        gz.append(conv_layer(g, weights, f"ctx.gates{lv}.z"))
        gr.append(conv_layer(g, weights, f"ctx.gates{lv}.r"))
        gh.append(conv_layer(g, weights, f"ctx.gates{lv}.h"))
        if f"ctx.init{lv}.kernel" in weights:
            h0.append(np.tanh(conv_layer(g, weights, f"ctx.init{lv}")))
        else:
            h0.append(np.zeros((cfg.hidden_channels,) + ctx.shape[1:], dtype=DTYPE))
    return ContextSet(tuple(levels), tuple(gz), tuple(gr), tuple(gh), tuple(h0))


# ---------------------------------------------------------------------------
# weight generation
# ---------------------------------------------------------------------------

def layer_specs(cfg: EngineConfig, include_init_heads: bool = False):
    """Canonical (name, kernel shape) list; generation order is load order."""
    specs: list[tuple[str, tuple[int, ...]]] = []

    def conv(name: str, cout: int, cin: int, k: int) -> None:
        specs.append((f"{name}.kernel", (cout, cin, k, k)))
        specs.append((f"{name}.bias", (cout,)))

    fc, cc, hid = cfg.feat_channels, cfg.context_channels, cfg.hidden_channels
    ca = cfg.aux_channels
    conv("fe.conv1", fc, 3, 3)
    conv("fe.conv2", fc, fc, 3)
    conv("fe.conv3", fc, fc, 3)
    if ca:
        conv("aux.conv1", ca, 3, 3)
        conv("aux.conv2", ca, ca, 3)
        conv("aux.conv3", ca, ca, 3)
        conv("fuse.align", fc, ca, 1)
    conv("ctx.conv1", cc, 3, 3)
    conv("ctx.conv2", cc, cc, 3)
    conv("ctx.conv3", cc, cc, 3)
    conv("ctx.down8", cc, cc, 3)
    conv("ctx.down16", cc, cc, 3)
    if ca:
        conv("ctxaux.conv1", ca, 3, 3)
        conv("ctxaux.conv2", ca, ca, 3)
        conv("ctxaux.conv3", ca, ca, 3)
        conv("ctxaux.down8", ca, ca, 3)
        conv("ctxaux.down16", ca, ca, 3)
        for lv in CONTEXT_LEVELS:
            conv(f"ctx.align{lv}", cc, ca, 1)
    for lv in CONTEXT_LEVELS:
        for gate in ("z", "r", "h"):
            conv(f"ctx.gates{lv}.{gate}", hid, cc, 3)
        if include_init_heads:
            conv(f"ctx.init{lv}", hid, cc, 3)
    x4 = cfg.corr_channels + cfg.disp_channels + hid
    for phase, corr_in in (("su", 3 * len(cfg.lookup.scale_factors)),
                           ("du", cfg.lookup.pl_samples)):
        conv(f"{phase}.enc_corr", cfg.corr_channels, corr_in, 3)
        conv(f"{phase}.enc_disp", cfg.disp_channels, 1, 3)
        for gate in ("z", "r", "h"):
            conv(f"{phase}.gru4.w{gate}", hid, hid + x4, 3)
            conv(f"{phase}.gru8.w{gate}", hid, 3 * hid, 3)
            conv(f"{phase}.gru16.w{gate}", hid, 2 * hid, 3)
        conv(f"{phase}.head.conv1", cfg.head_channels, hid, 3)
        conv(f"{phase}.head.conv2", 1, cfg.head_channels, 3)
    conv("up.mask", 9 * cfg.upsample_factor ** 2, hid, 3)
    return specs


def generate_weights(cfg: EngineConfig, seed: int = 0,
                     include_init_heads: bool = False) -> WeightBundle:
    """Seeded uniform(-k, k) weights, k = 1/sqrt(fan_in), stored as float32."""
    rng = np.random.default_rng(seed)
    bundle = WeightBundle(seed=seed)
    bound = 0.0
    for name, shape in layer_specs(cfg, include_init_heads):
        if name.endswith(".kernel"):
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
        values = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        bundle.add(name, values.astype(DTYPE))
    return bundle
