"""Bit-exact readers/writers for disparity maps, images, and weight bundles.

Three byte formats:

* PFM, grayscale ``Pf`` variant: rows stored bottom-up, scale-line sign picks
  the endianness (negative = little-endian).  The writer always emits
  little-endian scale -1.0, so write(read(b)) is byte-identical for files
  this module wrote.
* 16-bit single-channel PNG disparity: stored value = disparity * 256,
  stored 0 marks an invalid pixel.
* A flat little-endian weight container: magic, version, seed, count, then
  per tensor (name length, name, rank, dims, float32 payload).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .ops import DTYPE

WEIGHT_MAGIC = b"SSWB"
WEIGHT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed or unsupported byte payload."""


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def _read_line(buf: io.BytesIO) -> bytes:
    line = buf.readline()
    if not line:
        raise DataFormatError("truncated PFM header")
    return line.strip()


def read_pfm(data: bytes) -> np.ndarray:
    """Decode a grayscale PFM payload to a top-down (h, w) array.

    Non-finite values (used by some ground-truth files for unknown pixels)
    are preserved; use :func:`read_pfm_disparity` to split them into a mask.
    """
    buf = io.BytesIO(data)
    magic = _read_line(buf)
    if magic != b"Pf":
        raise DataFormatError(f"bad PFM magic {magic!r}, expected b'Pf'")
    dims = _read_line(buf).split()
    if len(dims) != 2:
        raise DataFormatError(f"bad PFM dimension line {dims!r}")
    width, height = int(dims[0]), int(dims[1])
    if width <= 0 or height <= 0:
        raise DataFormatError(f"non-positive PFM dimensions {width}x{height}")
    scale = float(_read_line(buf))
    if scale == 0:
        raise DataFormatError("PFM scale must be nonzero")
    payload = buf.read()
    expected = width * height * 4
    if len(payload) != expected:
        raise DataFormatError(
            f"PFM payload is {len(payload)} bytes, expected {expected}")
    dt = "<f4" if scale < 0 else ">f4"
    rows = np.frombuffer(payload, dtype=dt).reshape(height, width)
    return rows[::-1].astype(DTYPE)


def write_pfm(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-d map, got shape {values.shape}")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + values[::-1].astype("<f4").tobytes()


def read_pfm_disparity(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """PFM ground-truth convention: non-finite entries become invalid pixels."""
    raw = read_pfm(data)
    mask = np.isfinite(raw)
    disp = np.where(mask, raw, 0.0)
    return disp, mask


# ---------------------------------------------------------------------------
# 16-bit PNG disparity
# ---------------------------------------------------------------------------

def read_disp_png16(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    img = Image.open(io.BytesIO(data))
    if img.mode not in ("I;16", "I;16B", "I;16L"):
        raise DataFormatError(
            f"expected a 16-bit single-channel PNG, got mode {img.mode!r}")
    stored = np.asarray(img)
    if stored.ndim != 2:
        raise DataFormatError(f"expected a single-channel image, got shape {stored.shape}")
    stored = stored.astype(np.uint16)
    mask = stored > 0
    return stored.astype(DTYPE) / 256.0, mask


def write_disp_png16(disp: np.ndarray, mask: np.ndarray | None = None) -> bytes:
    disp = np.asarray(disp, dtype=DTYPE)
    if disp.ndim != 2:
        raise ValueError(f"PNG16 writer expects a 2-d map, got shape {disp.shape}")
    stored = np.clip(np.round(disp * 256.0), 0, 65535).astype(np.uint16)
    if mask is not None:
        stored = np.where(np.asarray(mask, dtype=bool), stored, 0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# 8-bit images (stereo pair input/output)
# ---------------------------------------------------------------------------

def read_image(data: bytes) -> np.ndarray:
    """Decode an 8-bit image to a (3, h, w) float map in [0, 1]."""
    img = Image.open(io.BytesIO(data))
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=DTYPE) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) image, got shape {img.shape}")
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# weight bundles
# ---------------------------------------------------------------------------

@dataclass
class WeightBundle:
    """Ordered name -> tensor map with provenance metadata."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = WEIGHT_VERSION
    seed: int | None = None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise KeyError(f"weight bundle has no tensor named {name!r}") from None

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def add(self, name: str, values: np.ndarray) -> None:
        if name in self.tensors:
            raise ValueError(f"duplicate tensor name {name!r}")
        self.tensors[name] = np.ascontiguousarray(values, dtype=DTYPE)


def save_weights(bundle: WeightBundle) -> bytes:
    out = io.BytesIO()
    seed = -1 if bundle.seed is None else int(bundle.seed)
    out.write(WEIGHT_MAGIC)
    out.write(struct.pack("<IqI", WEIGHT_VERSION, seed, len(bundle.tensors)))
    for name, tensor in bundle.tensors.items():
        encoded = name.encode("utf-8")
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<I", tensor.ndim))
        out.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        out.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return out.getvalue()


def load_weights(data: bytes) -> WeightBundle:
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != WEIGHT_MAGIC:
        raise DataFormatError(f"bad weight-container magic {magic!r}")
    head = buf.read(16)
    if len(head) != 16:
        raise DataFormatError("truncated weight-container header")
    version, seed, count = struct.unpack("<IqI", head)
    if version != WEIGHT_VERSION:
        raise DataFormatError(f"unsupported weight-container version {version}")
    bundle = WeightBundle(version=version, seed=None if seed < 0 else seed)
    for _ in range(count):
        raw = buf.read(4)
        if len(raw) != 4:
            raise DataFormatError("truncated tensor record")
        (name_len,) = struct.unpack("<I", raw)
        name = buf.read(name_len).decode("utf-8")
        raw = buf.read(4)
        if len(raw) != 4:
            raise DataFormatError(f"truncated rank for tensor {name!r}")
        (rank,) = struct.unpack("<I", raw)
        raw = buf.read(4 * rank)
        if len(raw) != 4 * rank:
            raise DataFormatError(f"truncated dims for tensor {name!r}")
        shape = struct.unpack(f"<{rank}I", raw)
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = buf.read(4 * n)
        if len(payload) != 4 * n:
            raise DataFormatError(f"truncated payload for tensor {name!r}")
        if name in bundle.tensors:
            raise DataFormatError(f"duplicate tensor name {name!r}")
        bundle.tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(DTYPE)
    return bundle
