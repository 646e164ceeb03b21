"""Stripmap radar simulation: acquisition geometry, scenes, and raw phase histories.

Phase histories are matrices with rows indexed by fast time (range samples)
and columns by slow time (pulses). Fast time runs from 0 at the start of the
receive window; slow time is centred so pulse ``num_pulses // 2`` sits at
azimuth 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from sarcs.exceptions import ConfigError, GeometryError, ValidationError
from sarcs.log import get_logger
from sarcs.validation import load_json, safe_write_json, validate_positive, validate_positive_int

logger = get_logger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadarParams:
    """Immutable acquisition geometry for one stripmap pass."""

    wavelength: float
    chirp_rate: float
    pulse_duration: float
    range_sample_rate: float
    prf: float
    platform_velocity: float
    center_range: float
    synthetic_aperture_time: float
    num_range_samples: int
    num_pulses: int

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.startswith("num_"):
                validate_positive_int(f.name, value, minimum=2)
            else:
                validate_positive(f.name, value)
        if self.range_sample_rate <= self.bandwidth:
            raise ValidationError(
                f"range_sample_rate {self.range_sample_rate:g} Hz does not exceed the chirp "
                f"bandwidth {self.bandwidth:g} Hz.",
                suggestion="Raise range_sample_rate or shorten the chirp.",
            )
        if self.pulse_duration * self.range_sample_rate >= self.num_range_samples:
            raise ValidationError(
                "pulse does not fit inside the fast-time window.",
                suggestion="Increase num_range_samples or shorten pulse_duration.",
            )

    @property
    def bandwidth(self) -> float:
        return self.chirp_rate * self.pulse_duration

    @property
    def range_spacing(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.range_sample_rate)

    @property
    def azimuth_spacing(self) -> float:
        return self.platform_velocity / self.prf

    @property
    def doppler_bandwidth(self) -> float:
        """Azimuth bandwidth spanned by the synthetic aperture at any range."""
        v = self.platform_velocity
        return 2.0 * v * v * self.synthetic_aperture_time / (self.wavelength * self.center_range)

    @property
    def beam_fraction(self) -> float:
        """Half the aperture length divided by range (constant-beamwidth antenna)."""
        return self.platform_velocity * self.synthetic_aperture_time / (2.0 * self.center_range)

    @property
    def swath_range(self) -> tuple[float, float]:
        """Closest-approach ranges whose echo centre lands inside the receive window."""
        return 0.0, (self.num_range_samples - 1) * self.range_spacing

    @property
    def track_extent(self) -> tuple[float, float]:
        """Azimuth positions flown during the pass."""
        axis = self.azimuth_axis()
        return float(axis[0]), float(axis[-1])

    def fast_time(self) -> np.ndarray:
        return np.arange(self.num_range_samples) / self.range_sample_rate

    def slow_time(self) -> np.ndarray:
        return (np.arange(self.num_pulses) - self.num_pulses // 2) / self.prf

    def azimuth_axis(self) -> np.ndarray:
        return self.platform_velocity * self.slow_time()

    def range_axis(self) -> np.ndarray:
        return np.arange(self.num_range_samples) * self.range_spacing

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RadarParams":
        if not isinstance(raw, dict):
            raise ConfigError("Radar parameters must be a JSON object.")
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        missing = names - set(raw)
        if unknown or missing:
            raise ConfigError(
                f"Radar parameters mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}.",
                suggestion=f"Provide exactly these keys: {sorted(names)}.",
            )
        return cls(**raw)

    @classmethod
    def load(cls, path: Path) -> "RadarParams":
        return cls.from_dict(load_json(path, "radar parameter file"))

    def save(self, path: Path) -> None:
        safe_write_json(Path(path), self.to_dict())

    @classmethod
    def desk_default(cls) -> "RadarParams":
        """256 x 256 desk geometry; a half-rate azimuth mask puts the ghost N/2 columns away."""
        return cls(
            wavelength=0.025,
            chirp_rate=1.25e14,
            pulse_duration=0.4e-6,
            range_sample_rate=100e6,
            prf=100.0,
            platform_velocity=10.0,
            center_range=204.8,
            synthetic_aperture_time=1.28,
            num_range_samples=256,
            num_pulses=256,
        )

    @classmethod
    def compact(cls) -> "RadarParams":
        """64 x 64 geometry with the same aliasing layout as desk_default."""
        return cls(
            wavelength=0.025,
            chirp_rate=2.5e14,
            pulse_duration=0.2e-6,
            range_sample_rate=100e6,
            prf=100.0,
            platform_velocity=10.0,
            center_range=51.2,
            synthetic_aperture_time=0.32,
            num_range_samples=64,
            num_pulses=64,
        )


@dataclass(frozen=True)
class Scatterer:
    azimuth_pos: float
    range_pos: float
    amplitude: float = 1.0
    phase: float = 0.0


@dataclass
class ReflectivityGrid:
    """Complex reflectivity sampled on a regular grid.

    Rows step in range, columns in azimuth. The grid is centred on
    (azimuth_center, range_center); a missing range_center means the
    radar's scene-centre range.
    """

    values: np.ndarray
    cell_spacing: float
    range_center: float | None = None
    azimuth_center: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValidationError("Reflectivity grid must be a non-empty 2-D array.")
        validate_positive("cell_spacing", self.cell_spacing)

    def cell_positions(self, default_range: float) -> tuple[np.ndarray, np.ndarray]:
        """(azimuth, range) coordinates of every cell, row-major."""
        rows, cols = self.values.shape
        centre = default_range if self.range_center is None else self.range_center
        ranges = centre + (np.arange(rows) - (rows - 1) / 2.0) * self.cell_spacing
        azimuths = self.azimuth_center + (np.arange(cols) - (cols - 1) / 2.0) * self.cell_spacing
        rg, az = np.meshgrid(ranges, azimuths, indexing="ij")
        return az.ravel(), rg.ravel()


@dataclass
class Scene:
    scatterers: list[Scatterer] = field(default_factory=list)
    reflectivity_grid: ReflectivityGrid | None = None

    def targets(self, radar: RadarParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flatten into (azimuth, range, complex amplitude) arrays, scatterers first."""
        az = [s.azimuth_pos for s in self.scatterers]
        rg = [s.range_pos for s in self.scatterers]
        amp = []
        for s in self.scatterers:
            if not (math.isfinite(s.amplitude) and math.isfinite(s.phase)):
                raise ValidationError(f"Scatterer at ({s.azimuth_pos}, {s.range_pos}) has a non-finite amplitude.")
            if s.amplitude < 0:
                raise ValidationError(f"Scatterer at ({s.azimuth_pos}, {s.range_pos}) has a negative amplitude.")
            amp.append(s.amplitude * np.exp(1j * s.phase))
        az_arr = np.asarray(az, dtype=float)
        rg_arr = np.asarray(rg, dtype=float)
        amp_arr = np.asarray(amp, dtype=np.complex128)
        if self.reflectivity_grid is not None:
            grid = self.reflectivity_grid
            if not np.all(np.isfinite(grid.values)):
                raise ValidationError("Reflectivity grid contains non-finite values.")
            grid_az, grid_rg = grid.cell_positions(radar.center_range)
            az_arr = np.concatenate([az_arr, grid_az])
            rg_arr = np.concatenate([rg_arr, grid_rg])
            amp_arr = np.concatenate([amp_arr, grid.values.ravel()])
        return az_arr, rg_arr, amp_arr

    def to_dict(self) -> dict:
        out: dict = {"scatterers": [asdict(s) for s in self.scatterers]}
        if self.reflectivity_grid is not None:
            grid = self.reflectivity_grid
            out["reflectivity_grid"] = {
                "real": grid.values.real.tolist(),
                "imag": grid.values.imag.tolist(),
                "cell_spacing": grid.cell_spacing,
                "range_center": grid.range_center,
                "azimuth_center": grid.azimuth_center,
            }
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Scene":
        if not isinstance(raw, dict):
            raise ConfigError("Scene must be a JSON object.")
        try:
            scatterers = [Scatterer(**s) for s in raw.get("scatterers", [])]
        except TypeError as e:
            raise ConfigError(f"Invalid scatterer entry: {e}",
                              suggestion="Use azimuth_pos, range_pos, amplitude, phase.")
        grid = None
        grid_raw = raw.get("reflectivity_grid")
        if grid_raw is not None:
            values = np.asarray(grid_raw["real"], dtype=float) + 1j * np.asarray(
                grid_raw.get("imag", np.zeros_like(grid_raw["real"])), dtype=float)
            grid = ReflectivityGrid(
                values=values,
                cell_spacing=grid_raw["cell_spacing"],
                range_center=grid_raw.get("range_center"),
                azimuth_center=grid_raw.get("azimuth_center", 0.0),
            )
        return cls(scatterers=scatterers, reflectivity_grid=grid)

    @classmethod
    def load(cls, path: Path) -> "Scene":
        return cls.from_dict(load_json(path, "scene file"))

    def save(self, path: Path) -> None:
        safe_write_json(Path(path), self.to_dict())


@dataclass
class PhaseHistory:
    samples: np.ndarray
    params: RadarParams

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        expected = (self.params.num_range_samples, self.params.num_pulses)
        if self.samples.shape != expected:
            raise ValidationError(
                f"Phase history shape {self.samples.shape} does not match radar {expected}."
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("Phase history contains non-finite samples.")

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape


def _check_swath(az: np.ndarray, rg: np.ndarray, radar: RadarParams) -> None:
    r_min, r_max = radar.swath_range
    a_min, a_max = radar.track_extent
    outside = (rg <= r_min) | (rg > r_max) | (az < a_min) | (az > a_max)
    if np.any(outside):
        i = int(np.flatnonzero(outside)[0])
        raise GeometryError(
            f"{int(outside.sum())} scatterer(s) outside the swath "
            f"(range ({r_min:.2f}, {r_max:.2f}] m, azimuth [{a_min:.2f}, {a_max:.2f}] m)",
            position=(float(az[i]), float(rg[i])),
        )


def _accumulate_echo(samples: np.ndarray, radar: RadarParams, azimuth: float,
                     rng: float, amplitude: complex) -> None:
    """Add one scatterer's windowed chirp echoes to `samples` in place."""
    if amplitude == 0:
        return
    platform = radar.azimuth_axis()
    pulses = np.flatnonzero(np.abs(platform - azimuth) <= rng * radar.beam_fraction)
    if pulses.size == 0:
        return

    fs = radar.range_sample_rate
    tp = radar.pulse_duration
    slant = np.sqrt(rng * rng + (platform[pulses] - azimuth) ** 2)
    delay = 2.0 * slant / SPEED_OF_LIGHT

    half_width = int(math.ceil(tp * fs / 2.0)) + 1
    bins = np.rint(delay * fs).astype(int)[:, None] + np.arange(-half_width, half_width + 1)[None, :]
    offset = bins / fs - delay[:, None]
    inside = (np.abs(offset) <= tp / 2.0) & (bins >= 0) & (bins < radar.num_range_samples)

    envelope = 0.54 + 0.46 * np.cos(2.0 * np.pi * offset / tp)
    carrier = np.exp(-4j * np.pi * slant / radar.wavelength)[:, None]
    echo = amplitude * envelope * np.exp(1j * np.pi * radar.chirp_rate * offset ** 2) * carrier

    columns = np.broadcast_to(pulses[:, None], bins.shape)
    samples[bins[inside], columns[inside]] += echo[inside]


def complex_noise(shape: tuple[int, ...], sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian noise with E|n|^2 = sigma^2."""
    scale = sigma / math.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_phase_history(scene: Scene, radar: RadarParams,
                           thermal_noise_sigma: float = 0.0, seed: int = 0) -> PhaseHistory:
    """Sum every scatterer's chirp echoes, then add thermal noise."""
    validate_positive("thermal_noise_sigma", thermal_noise_sigma, allow_zero=True)
    az, rg, amp = scene.targets(radar)
    if az.size:
        _check_swath(az, rg, radar)

    samples = np.zeros((radar.num_range_samples, radar.num_pulses), dtype=np.complex128)
    for a, r, c in zip(az, rg, amp):
        _accumulate_echo(samples, radar, float(a), float(r), complex(c))

    if thermal_noise_sigma > 0:
        samples += complex_noise(samples.shape, thermal_noise_sigma, np.random.default_rng(seed))

    logger.debug("Simulated %d scatterers into %dx%d phase history (sigma=%g)",
                 az.size, samples.shape[0], samples.shape[1], thermal_noise_sigma)
    return PhaseHistory(samples=samples, params=radar)


def simulate_speckle_scene(azimuth_extent: float, range_extent: float,
                           cell_spacing: float, seed: int = 0,
                           range_center: float | None = None,
                           point_targets: int = 0, target_amplitude: float = 10.0) -> Scene:
    """Grid of i.i.d. unit-variance circular complex Gaussian reflectivities.

    point_targets bright scatterers are added on the grid's centre range at
    seeded azimuths within the central 80% of azimuth_extent, with random phase.
    They need an explicit range_center.
    """
    spacing = validate_positive("cell_spacing", cell_spacing)
    for name, extent in (("azimuth_extent", azimuth_extent), ("range_extent", range_extent)):
        validate_positive(name, extent)
        if extent < spacing * (1 - 1e-9):
            raise ValidationError(
                f"{name} {extent:g} m is smaller than cell_spacing {spacing:g} m.",
                suggestion="Enlarge the extent or refine the grid.",
            )
    rows = max(1, int(math.floor(range_extent / spacing + 0.5)))
    cols = max(1, int(math.floor(azimuth_extent / spacing + 0.5)))
    validate_positive_int("point_targets", point_targets, minimum=0)
    if point_targets and range_center is None:
        raise ValidationError("point targets need an explicit range_center.")
    rng = np.random.default_rng(seed)
    values = complex_noise((rows, cols), 1.0, rng)
    targets = [
        Scatterer(float(az), float(range_center), float(target_amplitude), float(phase))
        for az, phase in zip(rng.uniform(-0.4, 0.4, point_targets) * azimuth_extent,
                             rng.uniform(0.0, 2.0 * np.pi, point_targets))
    ]
    return Scene(scatterers=targets,
                 reflectivity_grid=ReflectivityGrid(values, spacing, range_center=range_center))
