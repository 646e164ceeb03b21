"""Image formation: range-migration (omega-k) focusing, backprojection, and multilooking.

Focused images keep the phase-history layout: rows step in range with pixel
i at range ``i * range_spacing``; columns step in azimuth with pixel j at
``(j - cols // 2) * azimuth_spacing``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sarcs.exceptions import FocusingError, GeometryError, ValidationError
from sarcs.log import get_logger
from sarcs.radar import SPEED_OF_LIGHT, PhaseHistory, RadarParams
from sarcs.validation import validate_positive, validate_positive_int

logger = get_logger(__name__)

MIN_FOCUS_DIM = 16
STOLT_TAPS = 8


@dataclass
class ComplexImage:
    pixels: np.ndarray
    azimuth_spacing: float
    range_spacing: float

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.complex128)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValidationError("Complex image must be a non-empty 2-D array.")
        if not np.all(np.isfinite(self.pixels)):
            raise ValidationError("Complex image contains non-finite pixels.")
        validate_positive("azimuth_spacing", self.azimuth_spacing)
        validate_positive("range_spacing", self.range_spacing)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class IntensityImage:
    pixels: np.ndarray
    looks_azimuth: int = 1
    looks_range: int = 1
    azimuth_spacing: float = 1.0
    range_spacing: float = 1.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValidationError("Intensity image must be a non-empty 2-D array.")
        if not np.all(np.isfinite(self.pixels)) or np.any(self.pixels < 0):
            raise ValidationError("Intensity pixels must be finite and non-negative.")
        validate_positive_int("looks_azimuth", self.looks_azimuth)
        validate_positive_int("looks_range", self.looks_range)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def _pulse_envelope(offset: np.ndarray, radar: RadarParams) -> np.ndarray:
    tp = radar.pulse_duration
    inside = np.abs(offset) <= tp / 2.0
    pulse = (0.54 + 0.46 * np.cos(2.0 * np.pi * offset / tp)) * np.exp(
        1j * np.pi * radar.chirp_rate * offset ** 2)
    return np.where(inside, pulse, 0.0)


def range_matched_filter(radar: RadarParams) -> np.ndarray:
    """Conjugate spectrum of the transmitted pulse, centred on fast time zero."""
    n = radar.num_range_samples
    wrapped_time = np.fft.fftfreq(n) * n / radar.range_sample_rate
    return np.conj(np.fft.fft(_pulse_envelope(wrapped_time, radar)))


def range_compress(samples: np.ndarray, radar: RadarParams) -> np.ndarray:
    spectrum = np.fft.fft(samples, axis=0) * range_matched_filter(radar)[:, None]
    return np.fft.ifft(spectrum, axis=0)


def _check_focusable(phase_history: PhaseHistory) -> RadarParams:
    radar = phase_history.params
    rows, cols = phase_history.shape
    if rows < MIN_FOCUS_DIM or cols < MIN_FOCUS_DIM:
        raise ValidationError(
            f"phase history {rows}x{cols} is too small to focus.",
            suggestion=f"Use at least {MIN_FOCUS_DIM} range samples and pulses.",
        )
    if radar.doppler_bandwidth > radar.prf:
        raise FocusingError(
            f"azimuth bandwidth {radar.doppler_bandwidth:.2f} Hz exceeds the PRF {radar.prf:.2f} Hz.",
            suggestion="Raise the PRF or shorten the synthetic aperture time.",
        )
    return radar


def _sinc_resample(data: np.ndarray, position: np.ndarray, taps: int = STOLT_TAPS) -> np.ndarray:
    """Read each column of `data` at fractional row `position` with a Hann-tapered sinc.

    Reads that fall outside the sampled support return zero.
    """
    n = data.shape[0]
    half = taps // 2
    base = np.floor(position).astype(int)
    out = np.zeros(position.shape, dtype=np.complex128)
    for shift in range(-half + 1, half + 1):
        index = base + shift
        distance = position - index
        weight = np.sinc(distance) * (0.5 + 0.5 * np.cos(np.pi * distance / half))
        valid = (index >= 0) & (index < n)
        gathered = np.take_along_axis(data, np.clip(index, 0, n - 1), axis=0)
        out += np.where(valid, weight * gathered, 0.0)
    out[(position < 0) | (position > n - 1)] = 0.0
    return out


def focus_rma(phase_history: PhaseHistory) -> ComplexImage:
    """Focus with the range-migration algorithm and Stolt interpolation."""
    radar = _check_focusable(phase_history)
    rows, cols = phase_history.shape
    c = SPEED_OF_LIGHT
    r_ref = radar.center_range

    spectrum = np.fft.fft2(np.fft.ifftshift(phase_history.samples, axes=1), norm="ortho")
    spectrum *= range_matched_filter(radar)[:, None]

    freq = np.fft.fftshift(np.fft.fftfreq(rows, d=1.0 / radar.range_sample_rate))
    k_r = 4.0 * np.pi * (c / radar.wavelength + freq) / c
    k_x = 2.0 * np.pi * np.fft.fftfreq(cols, d=radar.azimuth_spacing)
    spectrum = np.fft.fftshift(spectrum, axes=0)

    # Reference function multiply at the scene-centre range.
    k_sq = k_r[:, None] ** 2 - k_x[None, :] ** 2
    propagating = k_sq > 0
    k_z = np.sqrt(np.where(propagating, k_sq, 0.0))
    spectrum = np.where(propagating, spectrum * np.exp(1j * k_z * r_ref), 0.0)

    # Stolt mapping onto a uniform grid equal to the K_r grid.
    step = k_r[1] - k_r[0]
    source = np.sqrt(k_r[:, None] ** 2 + k_x[None, :] ** 2)
    stolt = _sinc_resample(spectrum, (source - k_r[0]) / step)
    stolt *= np.exp(-1j * k_r * r_ref)[:, None]

    image = np.fft.ifft2(np.fft.ifftshift(stolt, axes=0), norm="ortho")
    image = np.fft.fftshift(image, axes=1)
    logger.debug("RMA focused %dx%d phase history", rows, cols)
    return ComplexImage(image, radar.azimuth_spacing, radar.range_spacing)


def focus_backprojection(phase_history: PhaseHistory, grid_rows: int, grid_cols: int,
                         range_extent: tuple[float, float] | None = None,
                         azimuth_extent: tuple[float, float] | None = None) -> ComplexImage:
    """Coherent per-pixel sum over pulses of range-compressed, phase-corrected samples.

    Extents are half-open [start, stop) in meters. The defaults reproduce the
    focused-image pixel layout of focus_rma.
    """
    radar = phase_history.params
    grid_rows = validate_positive_int("grid_rows", grid_rows)
    grid_cols = validate_positive_int("grid_cols", grid_cols)
    nr, na = phase_history.shape
    full_range = (0.0, nr * radar.range_spacing)
    full_azimuth = (-(na // 2) * radar.azimuth_spacing, (na - na // 2) * radar.azimuth_spacing)
    range_extent = tuple(range_extent) if range_extent is not None else full_range
    azimuth_extent = tuple(azimuth_extent) if azimuth_extent is not None else full_azimuth

    for name, (lo, hi), (full_lo, full_hi) in (
        ("range", range_extent, full_range), ("azimuth", azimuth_extent, full_azimuth),
    ):
        if not lo < hi:
            raise ValidationError(f"{name} extent must be increasing, got ({lo}, {hi}).")
        if lo < full_lo - 1e-9 or hi > full_hi + 1e-9:
            raise GeometryError(
                f"{name} extent ({lo:.2f}, {hi:.2f}) m lies outside the swath "
                f"({full_lo:.2f}, {full_hi:.2f}) m",
                position=(lo, hi) if name == "azimuth" else None,
            )

    ranges = range_extent[0] + np.arange(grid_rows) * (range_extent[1] - range_extent[0]) / grid_rows
    azimuths = azimuth_extent[0] + np.arange(grid_cols) * (azimuth_extent[1] - azimuth_extent[0]) / grid_cols

    compressed = range_compress(phase_history.samples, radar)
    platform = radar.azimuth_axis()
    to_bins = 2.0 * radar.range_sample_rate / SPEED_OF_LIGHT
    image = np.zeros((grid_rows, grid_cols), dtype=np.complex128)
    for n in range(na):
        column = compressed[:, n]
        if not column.any():
            continue
        slant = np.sqrt(ranges[:, None] ** 2 + (azimuths[None, :] - platform[n]) ** 2)
        position = slant * to_bins
        lower = np.floor(position).astype(int)
        frac = position - lower
        valid = (lower >= 0) & (lower + 1 < nr)
        lower = np.clip(lower, 0, nr - 2)
        sample = column[lower] * (1.0 - frac) + column[lower + 1] * frac
        image += np.where(valid, sample * np.exp(4j * np.pi * slant / radar.wavelength), 0.0)

    logger.debug("Backprojected %d pulses onto %dx%d grid", na, grid_rows, grid_cols)
    return ComplexImage(
        image,
        azimuth_spacing=(azimuth_extent[1] - azimuth_extent[0]) / grid_cols,
        range_spacing=(range_extent[1] - range_extent[0]) / grid_rows,
    )


def multilook(image: ComplexImage, looks_azimuth: int, looks_range: int) -> IntensityImage:
    """Average |pixel|^2 over looks_range x looks_azimuth blocks; trailing partial blocks included."""
    looks_azimuth = validate_positive_int("looks_azimuth", looks_azimuth)
    looks_range = validate_positive_int("looks_range", looks_range)
    rows, cols = image.shape
    if looks_range > rows or looks_azimuth > cols:
        raise ValidationError(
            f"looks ({looks_range} range, {looks_azimuth} azimuth) exceed image {rows}x{cols}.",
            suggestion="Use fewer looks than the image dimensions.",
        )
    out_rows = math.ceil(rows / looks_range)
    out_cols = math.ceil(cols / looks_azimuth)
    power = np.zeros((out_rows * looks_range, out_cols * looks_azimuth))
    counts = np.zeros_like(power)
    power[:rows, :cols] = np.abs(image.pixels) ** 2
    counts[:rows, :cols] = 1.0
    shape = (out_rows, looks_range, out_cols, looks_azimuth)
    sums = power.reshape(shape).sum(axis=(1, 3))
    totals = counts.reshape(shape).sum(axis=(1, 3))
    return IntensityImage(
        pixels=sums / totals,
        looks_azimuth=looks_azimuth,
        looks_range=looks_range,
        azimuth_spacing=image.azimuth_spacing * looks_azimuth,
        range_spacing=image.range_spacing * looks_range,
    )
