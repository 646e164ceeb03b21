"""Image utilities: dB normalization, quality metrics, raster containers, and PGM export.

Raster container layout (little-endian):

    bytes 0-3    magic  b"SARC"
    bytes 4-7    dtype tag  b"cf32" | b"f32r" | b"u8\\0\\0"
    bytes 8-11   rows  (uint32)
    bytes 12-15  cols  (uint32)
    payload      rows * cols elements, row-major
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from sarcs.exceptions import (
    ExportError, RasterDtypeError, RasterFormatError, RasterTruncatedError, ValidationError,
)
from sarcs.focusing import IntensityImage
from sarcs.log import get_logger
from sarcs.validation import atomic_write_bytes

logger = get_logger(__name__)

DB_GUARD = 1e-12
PEAK_TO_PEAK = 2.0
SSIM_WINDOW = 8

RASTER_MAGIC = b"SARC"
_HEADER = struct.Struct("<4s4sII")


@dataclass
class NormalizedImage:
    """Log-intensity image mapped affinely onto [-1, 1]."""

    pixels: np.ndarray
    floor_db: float
    ceil_db: float

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValidationError("Normalized image must be a non-empty 2-D array.")
        if not np.all(np.isfinite(self.pixels)):
            raise ValidationError("Normalized image contains non-finite pixels.")
        if self.pixels.min() < -1.0 or self.pixels.max() > 1.0:
            raise ValidationError("Normalized pixels must lie in [-1, 1].")
        if not self.ceil_db > self.floor_db:
            raise ValidationError(f"ceil_db {self.ceil_db} must exceed floor_db {self.floor_db}.")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def metadata(self) -> dict:
        return {"kind": "normalized", "floor_db": float(self.floor_db), "ceil_db": float(self.ceil_db)}


def to_normalized(image: IntensityImage, floor_db: float, ceil_db: float) -> NormalizedImage:
    if not ceil_db > floor_db:
        raise ValidationError(
            f"ceil_db ({ceil_db}) must be greater than floor_db ({floor_db}).",
            suggestion="Derive the range with dynamic_range() on the clean image.",
        )
    db = 10.0 * np.log10(image.pixels + DB_GUARD)
    scaled = 2.0 * (np.clip(db, floor_db, ceil_db) - floor_db) / (ceil_db - floor_db) - 1.0
    return NormalizedImage(np.clip(scaled, -1.0, 1.0), float(floor_db), float(ceil_db))


def to_intensity(image: NormalizedImage) -> IntensityImage:
    """Undo the dB mapping; clamped pixels come back at the floor or ceiling."""
    db = image.floor_db + (image.pixels + 1.0) / 2.0 * (image.ceil_db - image.floor_db)
    return IntensityImage(np.power(10.0, db / 10.0))


def dynamic_range(image: IntensityImage, low_percentile: float = 1.0,
                  high_percentile: float = 99.0) -> tuple[float, float]:
    """(floor_db, ceil_db) from percentiles of the image's dB values; always ceil > floor."""
    if not 0.0 <= low_percentile < high_percentile <= 100.0:
        raise ValidationError(
            f"percentiles must satisfy 0 <= low < high <= 100, got {low_percentile}, {high_percentile}."
        )
    db = 10.0 * np.log10(image.pixels + DB_GUARD)
    floor_db, ceil_db = (float(v) for v in np.percentile(db, [low_percentile, high_percentile]))
    if ceil_db <= floor_db:
        ceil_db = floor_db + 1.0
    return floor_db, ceil_db


def crop_or_pad(image: IntensityImage, rows: int, cols: int) -> IntensityImage:
    """Centre-crop or zero-pad to rows x cols."""
    out = np.zeros((rows, cols))
    src_rows, src_cols = image.shape
    take_r, take_c = min(rows, src_rows), min(cols, src_cols)
    src_r0, src_c0 = (src_rows - take_r) // 2, (src_cols - take_c) // 2
    dst_r0, dst_c0 = (rows - take_r) // 2, (cols - take_c) // 2
    out[dst_r0:dst_r0 + take_r, dst_c0:dst_c0 + take_c] = \
        image.pixels[src_r0:src_r0 + take_r, src_c0:src_c0 + take_c]
    return IntensityImage(out, image.looks_azimuth, image.looks_range,
                          image.azimuth_spacing, image.range_spacing)


def _pixels_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    y = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"image dimensions differ: {x.shape} vs {y.shape}.")
    return x, y


def psnr(a: NormalizedImage, b: NormalizedImage) -> float:
    """Peak signal-to-noise ratio in dB with a peak-to-peak of 2; inf for identical images."""
    x, y = _pixels_pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK_TO_PEAK ** 2 / mse)


def _box_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Mean over every fully contained window x window block."""
    table = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    table[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    w = window
    total = table[w:, w:] - table[:-w, w:] - table[w:, :-w] + table[:-w, :-w]
    return total / (w * w)


def ssim(a: NormalizedImage, b: NormalizedImage, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over all window x window patches."""
    x, y = _pixels_pair(a, b)
    if x.shape[0] < window or x.shape[1] < window:
        raise ValidationError(f"SSIM needs at least {window}x{window} pixels, got {x.shape}.")
    c1 = (0.01 * PEAK_TO_PEAK) ** 2
    c2 = (0.03 * PEAK_TO_PEAK) ** 2

    mu_x = _box_mean(x, window)
    mu_y = _box_mean(y, window)
    var_x = _box_mean(x * x, window) - mu_x * mu_x
    var_y = _box_mean(y * y, window) - mu_y * mu_y
    cov = _box_mean(x * y, window) - mu_x * mu_y

    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(score.mean())


def ghost_ratio(image: IntensityImage, azimuth_offset: int) -> float:
    """Amplitude of the strongest response azimuth_offset columns from the peak, over the peak.

    The ghost is the maximum over a 3x3 neighbourhood; columns wrap, rows clip.
    """
    pixels = image.pixels
    rows, cols = pixels.shape
    if not 0 <= azimuth_offset < cols:
        raise ValidationError(f"azimuth_offset {azimuth_offset} must lie in [0, {cols}).")
    peak = float(pixels.max())
    if peak <= 0.0:
        raise ValidationError("image has no positive peak.")
    r, c = np.unravel_index(int(np.argmax(pixels)), pixels.shape)
    row_idx = np.arange(max(r - 1, 0), min(r + 2, rows))
    col_idx = (c + azimuth_offset + np.arange(-1, 2)) % cols
    ghost = float(pixels[np.ix_(row_idx, col_idx)].max())
    return math.sqrt(ghost / peak)


class RasterDtype(str, Enum):
    CF32 = "cf32"
    F32R = "f32r"
    U8 = "u8"

    @property
    def tag(self) -> bytes:
        return self.value.encode("ascii").ljust(4, b"\0")

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype({"cf32": "<c8", "f32r": "<f4", "u8": "u1"}[self.value])

    @classmethod
    def from_tag(cls, tag: bytes) -> "RasterDtype":
        return cls(tag.rstrip(b"\0").decode("ascii"))


@dataclass(frozen=True)
class RasterHeader:
    magic: bytes
    dtype: RasterDtype
    rows: int
    cols: int

    @property
    def payload_size(self) -> int:
        return self.rows * self.cols * self.dtype.numpy_dtype.itemsize


def write_raster(matrix: np.ndarray, dtype: RasterDtype | str, path: Path) -> RasterHeader:
    """Write a 2-D matrix atomically. Non-finite float data is rejected."""
    dtype = RasterDtype(dtype)
    array = np.asarray(matrix)
    if array.ndim != 2 or array.size == 0:
        raise RasterFormatError(path, f"expected a non-empty 2-D matrix, got shape {array.shape}")
    if dtype == RasterDtype.U8:
        if np.any(array < 0) or np.any(array > 255):
            raise RasterFormatError(path, "u8 raster values must lie in 0..255")
    elif not np.all(np.isfinite(array)):
        raise RasterFormatError(path, "refusing to write NaN or infinite values")
    if dtype == RasterDtype.F32R and np.iscomplexobj(array):
        raise RasterDtypeError(path, "complex data cannot be written as f32r",
                               suggestion="Use cf32 for complex matrices.")

    header = RasterHeader(RASTER_MAGIC, dtype, array.shape[0], array.shape[1])
    payload = np.ascontiguousarray(array.astype(dtype.numpy_dtype)).tobytes()
    atomic_write_bytes(Path(path), _HEADER.pack(RASTER_MAGIC, dtype.tag, header.rows, header.cols) + payload)
    return header


def read_raster_header(data: bytes, path: Path) -> RasterHeader:
    if len(data) < _HEADER.size:
        raise RasterTruncatedError(path, f"header needs {_HEADER.size} bytes, file has {len(data)}")
    magic, tag, rows, cols = _HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise RasterFormatError(path, f"bad magic {magic!r}")
    try:
        dtype = RasterDtype.from_tag(tag)
    except (ValueError, UnicodeDecodeError):
        raise RasterFormatError(path, f"unknown dtype tag {tag!r}")
    if rows == 0 or cols == 0:
        raise RasterFormatError(path, f"empty raster {rows}x{cols}")
    return RasterHeader(magic, dtype, rows, cols)


def read_raster(path: Path, expected: RasterDtype | str | None = None) -> tuple[np.ndarray, RasterHeader]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise RasterFormatError(path, f"cannot read file: {e}")
    header = read_raster_header(data, path)
    if expected is not None and header.dtype != RasterDtype(expected):
        raise RasterDtypeError(path, f"expected {RasterDtype(expected).value}, found {header.dtype.value}")
    payload = data[_HEADER.size:]
    if len(payload) != header.payload_size:
        raise RasterTruncatedError(
            path, f"header says {header.rows}x{header.cols} ({header.payload_size} bytes), "
                  f"payload has {len(payload)} bytes")
    matrix = np.frombuffer(payload, dtype=header.dtype.numpy_dtype).reshape(header.rows, header.cols)
    return matrix.copy(), header


def export_pgm(image: NormalizedImage | IntensityImage, path: Path) -> None:
    """Write a 16-bit binary PGM. Normalized images map [-1, 1]; intensity images map [min, max]."""
    if isinstance(image, NormalizedImage):
        scaled = (np.clip(image.pixels, -1.0, 1.0) + 1.0) / 2.0
    elif isinstance(image, IntensityImage):
        lo, hi = float(image.pixels.min()), float(image.pixels.max())
        scaled = (image.pixels - lo) / (hi - lo) if hi > lo else np.zeros(image.shape)
    else:
        raise ValidationError(f"cannot export {type(image).__name__} as PGM.")
    rows, cols = scaled.shape
    samples = np.rint(scaled * 65535.0).astype(">u2")
    header = f"P5\n{cols} {rows}\n65535\n".encode("ascii")
    try:
        atomic_write_bytes(Path(path), header + samples.tobytes())
    except OSError as e:
        raise ExportError(path, str(e))
    logger.debug("Exported %dx%d PGM to %s", rows, cols, path)
