"""Image data model, color conversion, resampling, and file formats.

Planes are plain numpy arrays: an 8-bit plane is a 2-D uint8 array, a real
plane is a 2-D float64 array. Intensities live in [0,1] internally; 8-bit
values exist only at I/O boundaries.

Conventions fixed here (they affect downstream numbers, so they are part of
the contract):
  * YUV is full-range BT.601: Y = 0.299 R + 0.587 G + 0.114 B,
    U = (B - Y)*0.492 + 128, V = (R - Y)*0.877 + 128, with Y rounded to
    8 bits before the chroma differences are formed, round-half-up, and
    clamping to [0, 255].
  * Bilinear resampling uses the half-pixel-center convention: output
    pixel i samples input coordinate (i + 0.5)*scale - 0.5, edge-clamped.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from ._num import bilinear_sample, round_half_up
from .errors import ConfigError, FormatError, IoError, MetadataError, StackShapeError

LUT_MAGIC = b"MEFL"
LUT_VERSION = 1


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------

def _as_plane8(a, name="plane"):
    a = np.asarray(a)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise StackShapeError(f"{name} must be a 2-D uint8 array, got {a.dtype} {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise StackShapeError(f"{name} must be at least 1x1")
    return a


@dataclass(frozen=True, eq=False)
class YuvImage:
    """One frame as three full-range BT.601 planes of identical size."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        y = _as_plane8(self.y, "y")
        u = _as_plane8(self.u, "u")
        v = _as_plane8(self.v, "v")
        if not (y.shape == u.shape == v.shape):
            raise StackShapeError(
                f"plane dimensions differ: y={y.shape} u={u.shape} v={v.shape}")

    @property
    def height(self):
        return self.y.shape[0]

    @property
    def width(self):
        return self.y.shape[1]


@dataclass(frozen=True, eq=False)
class ExposureStack:
    """K co-registered frames with their exposure values, EV-ascending."""

    frames: tuple
    evs: tuple

    def __init__(self, frames, evs):
        frames = tuple(frames)
        evs = tuple(float(e) for e in evs)
        if len(frames) < 1:
            raise StackShapeError("a stack needs at least one frame")
        if len(frames) != len(evs):
            raise MetadataError(
                f"{len(frames)} frames but {len(evs)} exposure values")
        shape = frames[0].y.shape
        for f in frames[1:]:
            if f.y.shape != shape:
                raise StackShapeError(
                    f"frame dimensions differ: {f.y.shape} vs {shape}")
        # Frames created by grouping/duplication may share an EV, so the
        # type only requires a nondecreasing order; ingestion is stricter.
        if any(b < a for a, b in zip(evs, evs[1:])):
            raise MetadataError(f"exposure values must be nondecreasing: {evs}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "evs", evs)

    @property
    def k(self):
        return len(self.frames)

    @property
    def height(self):
        return self.frames[0].height

    @property
    def width(self):
        return self.frames[0].width

    def y_planes(self):
        """Y channels stacked as (K, H, W) float64 in [0, 1]."""
        return np.stack([f.y for f in self.frames]).astype(np.float64) / 255.0


@dataclass(frozen=True, eq=False)
class LutMatrix:
    """Per-exposure weight tables: row k maps 8-bit intensity to weight."""

    table: np.ndarray  # (K, 256) float32

    def __init__(self, table):
        table = np.ascontiguousarray(table, dtype=np.float32)
        if table.ndim != 2 or table.shape[1] != 256 or table.shape[0] < 1:
            raise FormatError(f"LUT table must be (K, 256), got {table.shape}")
        if not np.all(np.isfinite(table)):
            raise FormatError("LUT table contains non-finite entries")
        if np.any(table < 0):
            raise FormatError("LUT table contains negative entries")
        colsum = table.astype(np.float64).sum(axis=0)
        if np.any(colsum <= 0):
            raise FormatError("every LUT intensity column must have positive total weight")
        object.__setattr__(self, "table", table)

    @property
    def k_frames(self):
        return self.table.shape[0]


# ---------------------------------------------------------------------------
# Color conversion
# ---------------------------------------------------------------------------

def rgb_to_yuv_planes(r, g, b):
    """Convert 8-bit R,G,B planes to 8-bit Y,U,V planes."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    y = np.clip(round_half_up(0.299 * r + 0.587 * g + 0.114 * b), 0, 255)
    u = np.clip(round_half_up((b - y) * 0.492 + 128.0), 0, 255)
    v = np.clip(round_half_up((r - y) * 0.877 + 128.0), 0, 255)
    return y.astype(np.uint8), u.astype(np.uint8), v.astype(np.uint8)


def yuv_to_rgb_planes(y, u, v):
    """Invert rgb_to_yuv_planes (lossy where chroma clamped)."""
    rf, gf, bf = yuv_to_rgb_float(y, u, v)
    to8 = lambda p: np.clip(round_half_up(p * 255.0), 0, 255).astype(np.uint8)
    return to8(rf), to8(gf), to8(bf)


def yuv_to_rgb_float(y, u, v):
    """Reconstruct R,G,B as float64 planes in [0,1] without 8-bit rounding."""
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r = y + (v - 128.0) / 0.877
    b = y + (u - 128.0) / 0.492
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return (np.clip(r, 0, 255) / 255.0,
            np.clip(g, 0, 255) / 255.0,
            np.clip(b, 0, 255) / 255.0)


def rgb_to_yuv(r, g, b):
    """Scalar form of rgb_to_yuv_planes for a single 8-bit triplet."""
    y, u, v = rgb_to_yuv_planes(np.full((1, 1), r, np.uint8),
                                np.full((1, 1), g, np.uint8),
                                np.full((1, 1), b, np.uint8))
    return int(y[0, 0]), int(u[0, 0]), int(v[0, 0])


def yuv_to_rgb(y, u, v):
    """Scalar form of yuv_to_rgb_planes."""
    r, g, b = yuv_to_rgb_planes(np.full((1, 1), y, np.uint8),
                                np.full((1, 1), u, np.uint8),
                                np.full((1, 1), v, np.uint8))
    return int(r[0, 0]), int(g[0, 0]), int(b[0, 0])


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def choose_rate(h, w, target_min=128):
    """Integer downsampling rate putting the short side near target_min."""
    if target_min < 1:
        raise ConfigError("target_min must be >= 1")
    return max(1, min(h, w) // target_min)


def downsample_bilinear(plane, s):
    """Downsample an 8-bit plane by integer rate s to [0,1] reals.

    Output size is ceil(H/s) x ceil(W/s); output pixel i samples input
    coordinate (i + 0.5)*s - 0.5 (half-pixel centers), edge-clamped.
    """
    if s < 1:
        raise ConfigError(f"downsampling rate must be >= 1, got {s}")
    plane = np.asarray(plane)
    src = plane.astype(np.float64) / 255.0
    if s == 1:
        return src
    h, w = src.shape
    oh = -(-h // s)
    ow = -(-w // s)
    rows = (np.arange(oh) + 0.5) * s - 0.5
    cols = (np.arange(ow) + 0.5) * s - 0.5
    return bilinear_sample(src, rows, cols)


def resize_bilinear(plane, out_h, out_w):
    """Resize a real plane to (out_h, out_w), half-pixel-center convention."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    if (h, w) == (out_h, out_w):
        return plane.copy()
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    return bilinear_sample(plane, rows, cols)


# ---------------------------------------------------------------------------
# Image files: PNG (via Pillow) and binary PPM/PGM
# ---------------------------------------------------------------------------

def read_image(path):
    """Read an 8-bit image file; returns ('gray', plane) or ('rgb', HxWx3)."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if head in (b"P5", b"P6"):
        return read_ppm(path)
    try:
        from PIL import Image
        with Image.open(path) as im:
            if im.mode in ("I;16", "I", "F"):
                raise IoError(f"{path}: only 8-bit images are supported")
            if im.mode == "L":
                return "gray", np.asarray(im, dtype=np.uint8)
            rgb = im.convert("RGB")
            return "rgb", np.asarray(rgb, dtype=np.uint8)
    except IoError:
        raise
    except Exception as exc:
        raise IoError(f"cannot decode {path}: {exc}") from exc


def write_png(path, array):
    """Write a uint8 array (HxW gray or HxWx3 RGB) as PNG."""
    from PIL import Image
    array = np.ascontiguousarray(array, dtype=np.uint8)
    try:
        Image.fromarray(array).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ppm(path):
    """Read a binary PPM (P6) or PGM (P5), maxval 255 only."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    pos = 0
    fields = []
    while len(fields) < 4:
        if pos >= len(data):
            raise IoError(f"{path}: truncated PPM header")
        chunk = data[pos:pos + 1]
        if chunk == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif chunk.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            fields.append(data[start:pos])
    magic, wtxt, htxt, maxtxt = fields
    pos += 1  # single whitespace after maxval
    if magic not in (b"P5", b"P6"):
        raise IoError(f"{path}: not a binary PPM/PGM")
    try:
        w, h, maxval = int(wtxt), int(htxt), int(maxtxt)
    except ValueError as exc:
        raise IoError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise IoError(f"{path}: only maxval 255 supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise IoError(f"{path}: truncated PPM payload")
    arr = np.frombuffer(raw, dtype=np.uint8)
    if channels == 1:
        return "gray", arr.reshape(h, w)
    return "rgb", arr.reshape(h, w, 3)


def write_ppm(path, array):
    """Write uint8 gray (P5) or RGB (P6) as binary PPM, maxval 255."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim == 2:
        magic = b"P5"
        h, w = array.shape
    elif array.ndim == 3 and array.shape[2] == 3:
        magic = b"P6"
        h, w = array.shape[:2]
    else:
        raise IoError(f"cannot encode array of shape {array.shape} as PPM")
    try:
        with open(path, "wb") as fh:
            fh.write(magic + b"\n%d %d\n255\n" % (w, h))
            fh.write(array.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Sequence ingestion
# ---------------------------------------------------------------------------

def load_sequence(paths, evs):
    """Load image files into an ExposureStack.

    RGB inputs are converted to YUV; grayscale inputs get flat chroma
    (U = V = 128). EVs must be strictly increasing.
    """
    paths = list(paths)
    evs = [float(e) for e in evs]
    if len(paths) != len(evs):
        raise MetadataError(f"{len(paths)} files but {len(evs)} exposure values")
    if len(paths) == 0:
        raise StackShapeError("empty sequence")
    if any(b <= a for a, b in zip(evs, evs[1:])):
        raise MetadataError(f"exposure values must be strictly increasing: {evs}")

    frames = []
    shape = None
    for path in paths:
        kind, arr = read_image(path)
        dims = arr.shape[:2]
        if shape is None:
            shape = dims
        elif dims != shape:
            raise StackShapeError(f"{path}: size {dims} differs from {shape}")
        if kind == "gray":
            flat = np.full(dims, 128, np.uint8)
            frames.append(YuvImage(arr, flat, flat.copy()))
        else:
            y, u, v = rgb_to_yuv_planes(arr[..., 0], arr[..., 1], arr[..., 2])
            frames.append(YuvImage(y, u, v))
    return ExposureStack(frames, evs)


def load_sequence_dir(directory):
    """Load a sequence directory with a `manifest.tsv` (filename<TAB>ev)."""
    manifest = os.path.join(directory, "manifest.tsv")
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {manifest}: {exc}") from exc
    paths, evs = [], []
    for ln in lines:
        parts = ln.split("\t")
        if len(parts) != 2:
            raise MetadataError(f"{manifest}: malformed line {ln!r}")
        try:
            evs.append(float(parts[1]))
        except ValueError as exc:
            raise MetadataError(f"{manifest}: bad EV in {ln!r}") from exc
        paths.append(os.path.join(directory, parts[0]))
    return load_sequence(paths, evs)


def yuv_to_rgb_image(img: YuvImage):
    """YuvImage -> HxWx3 uint8 RGB array."""
    r, g, b = yuv_to_rgb_planes(img.y, img.u, img.v)
    return np.stack([r, g, b], axis=-1)


def rgb_image_to_yuv(rgb):
    """HxWx3 uint8 RGB array -> YuvImage."""
    y, u, v = rgb_to_yuv_planes(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    return YuvImage(y, u, v)


# ---------------------------------------------------------------------------
# LUT file format ("MEFL")
# ---------------------------------------------------------------------------

def write_lut(lut: LutMatrix, path):
    """Serialize a LutMatrix: magic, u16 version, u16 K, K*256 f32 LE."""
    payload = (LUT_MAGIC
               + struct.pack("<HH", LUT_VERSION, lut.k_frames)
               + lut.table.astype("<f4").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_lut(path) -> LutMatrix:
    """Read a MEFL file back into a LutMatrix, validating the format."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < 8:
        raise IoError(f"{path}: truncated header")
    if data[:4] != LUT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, k = struct.unpack("<HH", data[4:8])
    if version != LUT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = 8 + k * 256 * 4
    if len(data) != need:
        raise IoError(f"{path}: expected {need} bytes, got {len(data)}")
    table = np.frombuffer(data[8:], dtype="<f4").reshape(k, 256)
    if np.any(np.isnan(table)):
        raise FormatError(f"{path}: table contains NaN")
    return LutMatrix(table)
