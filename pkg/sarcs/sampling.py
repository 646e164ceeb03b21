"""Compressive sampling masks over phase-history matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from sarcs.exceptions import MaskError, ValidationError
from sarcs.log import get_logger
from sarcs.radar import PhaseHistory, complex_noise
from sarcs.validation import validate_fraction, validate_positive, validate_positive_int

logger = get_logger(__name__)


class MaskPattern(str, Enum):
    REGULAR_AZIMUTH = "RegularAzimuth"
    REGULAR_AZIMUTH_RANDOM_RANGE = "RegularAzimuthRandomRange"
    RANDOM_AZIMUTH = "RandomAzimuth"
    APERTURE_GAP = "ApertureGap"


@dataclass(frozen=True)
class SamplingMask:
    """Boolean keep-matrix, same shape as the phase history (rows = range samples)."""

    keep: np.ndarray
    pattern: MaskPattern
    azimuth_ratio: float
    range_ratio: float = 1.0
    seed: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def ratio(self) -> float:
        """Nominal retained fraction."""
        if self.pattern == MaskPattern.REGULAR_AZIMUTH_RANDOM_RANGE:
            return self.azimuth_ratio * self.range_ratio
        return self.azimuth_ratio

    def metadata(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "azimuth_ratio": self.azimuth_ratio,
            "range_ratio": self.range_ratio,
            "seed": self.seed,
            "retained_fraction": retained_fraction(self),
        }


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fisher_yates_prefix(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """First k entries of a seeded Fisher-Yates shuffle of range(n)."""
    order = np.arange(n)
    for i in range(k):
        j = int(rng.integers(i, n))
        order[i], order[j] = order[j], order[i]
    return np.sort(order[:k])


def _count(ratio: float, total: int, axis: str) -> int:
    n = _round_half_up(ratio * total)
    if n == 0:
        raise MaskError(
            f"{axis} ratio {ratio:g} retains zero of {total} samples.",
            suggestion="Raise the ratio.",
        )
    return min(n, total)


def build_mask(pattern: MaskPattern | str, azimuth_ratio: float, range_ratio: float,
               rows: int, cols: int, seed: int = 0) -> SamplingMask:
    """Build a keep-mask for a rows x cols phase history."""
    try:
        pattern = MaskPattern(pattern)
    except ValueError:
        raise MaskError(f"Unknown mask pattern {pattern!r}.",
                        suggestion=f"Use one of {[p.value for p in MaskPattern]}.")
    try:
        azimuth_ratio = validate_fraction("azimuth_ratio", azimuth_ratio)
        range_ratio = validate_fraction("range_ratio", range_ratio)
        rows = validate_positive_int("rows", rows, minimum=2)
        cols = validate_positive_int("cols", cols, minimum=2)
    except ValidationError as e:
        raise MaskError(e.reason, suggestion=e.suggestion)

    rng = np.random.default_rng(seed)
    keep = np.zeros((rows, cols), dtype=bool)

    if pattern in (MaskPattern.REGULAR_AZIMUTH, MaskPattern.REGULAR_AZIMUTH_RANDOM_RANGE):
        step = max(1, _round_half_up(1.0 / azimuth_ratio))
        columns = np.arange(0, cols, step)
        if pattern == MaskPattern.REGULAR_AZIMUTH:
            keep[:, columns] = True
        else:
            per_column = _count(range_ratio, rows, "range")
            for c in columns:
                keep[_fisher_yates_prefix(rng, rows, per_column), c] = True
    elif pattern == MaskPattern.RANDOM_AZIMUTH:
        keep[:, _fisher_yates_prefix(rng, cols, _count(azimuth_ratio, cols, "azimuth"))] = True
    else:
        run = _count(azimuth_ratio, cols, "azimuth")
        start = int(rng.integers(0, cols - run + 1))
        keep[:, start:start + run] = True

    mask = SamplingMask(keep=keep, pattern=pattern, azimuth_ratio=azimuth_ratio,
                        range_ratio=range_ratio, seed=seed)
    logger.debug("Built %s mask %dx%d retaining %.3f", pattern.value, rows, cols,
                 retained_fraction(mask))
    return mask


def apply_mask(phase_history: PhaseHistory, mask: SamplingMask,
               noise_floor_sigma: float = 0.0, seed: int = 0) -> PhaseHistory:
    """Keep retained samples; dropped samples become zero or floor noise."""
    if mask.shape != phase_history.shape:
        raise MaskError(
            f"mask shape {mask.shape} does not match phase history {phase_history.shape}.",
            suggestion="Build the mask with the phase history's rows and cols.",
        )
    try:
        sigma = validate_positive("noise_floor_sigma", noise_floor_sigma, allow_zero=True)
    except ValidationError as e:
        raise MaskError(e.reason)

    samples = phase_history.samples.copy()
    dropped = ~mask.keep
    if sigma > 0:
        noise = complex_noise(samples.shape, sigma, np.random.default_rng(seed))
        samples[dropped] = noise[dropped]
    else:
        samples[dropped] = 0.0
    return PhaseHistory(samples=samples, params=phase_history.params)


def retained_fraction(mask: SamplingMask) -> float:
    return float(np.count_nonzero(mask.keep)) / mask.keep.size
