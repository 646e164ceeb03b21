"""Experiment configuration loader: reads the experiment document + .env."""

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml
from dotenv import load_dotenv

from sarcs.exceptions import ConfigError, ValidationError
from sarcs.log import get_logger
from sarcs.patchwork import DEFAULT_TILE
from sarcs.radar import RadarParams
from sarcs.sampling import MaskPattern
from sarcs.validation import validate_positive, validate_positive_int

logger = get_logger(__name__)


@dataclass(frozen=True)
class SpeckleScenesConfig:
    count: int = 0
    azimuth_extent: float | None = None   # None = 90% of the flight track
    range_extent: float | None = None     # None = 80% of the receive window
    cell_spacing: float | None = None     # None = twice the azimuth sample spacing
    point_targets: int = 0                # bright scatterers on the scene-centre range
    target_amplitude: float = 10.0

    def __post_init__(self):
        validate_positive_int("point_targets", self.point_targets, minimum=0)
        validate_positive("target_amplitude", self.target_amplitude)

    def resolve(self, radar: RadarParams) -> tuple[float, float, float]:
        track = radar.num_pulses * radar.azimuth_spacing
        window = radar.num_range_samples * radar.range_spacing
        return (
            self.azimuth_extent if self.azimuth_extent is not None else 0.9 * track,
            self.range_extent if self.range_extent is not None else 0.8 * window,
            self.cell_spacing if self.cell_spacing is not None else 2.0 * radar.azimuth_spacing,
        )


@dataclass(frozen=True)
class ScenesConfig:
    files: tuple[Path, ...] = ()
    speckle: SpeckleScenesConfig = field(default_factory=SpeckleScenesConfig)


@dataclass(frozen=True)
class NoiseConfig:
    thermal_sigma: float = 0.0
    noise_floor_sigma: float | None = None   # None = thermal_sigma

    @property
    def floor_sigma(self) -> float:
        return self.thermal_sigma if self.noise_floor_sigma is None else self.noise_floor_sigma


@dataclass(frozen=True)
class MaskConfig:
    pattern: MaskPattern = MaskPattern.REGULAR_AZIMUTH
    azimuth_ratio: float = 0.5
    range_ratio: float = 1.0


@dataclass(frozen=True)
class MultilookConfig:
    azimuth: int = 20
    range: int = 4


@dataclass(frozen=True)
class NormalizationConfig:
    low_percentile: float = 1.0
    high_percentile: float = 99.0


@dataclass(frozen=True)
class CropConfig:
    rows: int | None = None
    cols: int | None = None

    @property
    def enabled(self) -> bool:
        return self.rows is not None and self.cols is not None


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class TrainingConfig:
    patch_size: int = 8
    bucket_count: int = 10
    ridge_lambda: float = 1e-3
    samples_per_pair: int = 2000
    seed: int = 0
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class ConditioningConfig:
    footprint: bool = False   # add the scene footprint as condition channels
    footprint_margin: int = 1

    def __post_init__(self):
        validate_positive_int("footprint_margin", self.footprint_margin, minimum=0)


@dataclass(frozen=True)
class TilingConfig:
    tile: int | None = None     # None = 256, shrunk to fit the image
    stride: int | None = None   # None = a quarter of the tile
    histnorm: bool = False

    def __post_init__(self):
        for name in ("tile", "stride"):
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ValidationError(f"tiling.{name} must be int, got {value!r}.")

    def resolve(self, rows: int, cols: int) -> tuple[int, int]:
        """(tile, stride) for a rows x cols image."""
        tile = self.tile if self.tile is not None else min(DEFAULT_TILE, rows, cols)
        stride = self.stride if self.stride is not None else max(1, tile // 4)
        return tile, stride


@dataclass(frozen=True)
class SamplingConfig:
    max_workers: int = 1


@dataclass(frozen=True)
class SeedsConfig:
    scene: int = 0
    noise: int = 1
    mask: int = 2
    training: int = 3
    sampling: int = 4


@dataclass(frozen=True)
class LoggingConfig:
    level: str = "INFO"
    file: str = ""  # empty = stderr only


@dataclass(frozen=True)
class ExperimentConfig:
    base_dir: Path = field(default_factory=Path.cwd)
    radar_path: Path | None = None
    scenes: ScenesConfig = field(default_factory=ScenesConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    multilook: MultilookConfig = field(default_factory=MultilookConfig)
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    tiling: TilingConfig = field(default_factory=TilingConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    output_dir: Path = Path("out")

    def load_radar(self) -> RadarParams:
        if self.radar_path is None:
            return RadarParams.desk_default()
        try:
            return RadarParams.load(self.radar_path)
        except ValidationError as e:
            raise ConfigError(f"Invalid radar parameters in {self.radar_path}: {e.reason}",
                              suggestion=e.suggestion)

    def with_output_dir(self, output_dir: Path) -> "ExperimentConfig":
        return replace(self, output_dir=Path(output_dir))

    @staticmethod
    def load(path: Path) -> "ExperimentConfig":
        """Load an experiment document (JSON) plus a sibling .env file."""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Experiment document not found: {path}",
                              suggestion="Pass --config with the path to experiment.json.")

        env_file = path.parent / ".env"
        if env_file.exists():
            load_dotenv(env_file)

        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid JSON in {path}: {e}")
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must contain a JSON object.")
        return ExperimentConfig.from_dict(raw, base_dir=path.parent.resolve())

    @staticmethod
    def from_dict(raw: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        known = {f.name for f in fields(ExperimentConfig)} - {"base_dir", "radar_path"} | {"radar"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"Unknown experiment sections: {unknown}",
                              suggestion=f"Valid sections are {sorted(known)}.")

        def resolve(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        scenes_raw = _section(raw, "scenes")
        files = scenes_raw.get("files", [])
        if not isinstance(files, list):
            raise ConfigError("scenes.files must be a list of paths.")
        scenes = ScenesConfig(
            files=tuple(resolve(f) for f in files),
            speckle=_build(SpeckleScenesConfig, _section(scenes_raw, "speckle", "scenes.speckle"),
                           "scenes.speckle"),
        )

        mask_raw = dict(_section(raw, "mask"))
        if "pattern" in mask_raw:
            try:
                mask_raw["pattern"] = MaskPattern(mask_raw["pattern"])
            except ValueError:
                raise ConfigError(f"Unknown mask pattern {mask_raw['pattern']!r}.",
                                  suggestion=f"Use one of {[p.value for p in MaskPattern]}.")

        training_raw = dict(_section(raw, "training"))
        if "seed" in training_raw:
            raise ConfigError("training.seed is not accepted; set seeds.training instead.")
        seeds = _build(SeedsConfig, _section(raw, "seeds"), "seeds")
        training = replace(_build(TrainingConfig, training_raw, "training"), seed=seeds.training)

        logging_cfg = _build(LoggingConfig, _section(raw, "logging"), "logging")
        env_level = os.getenv("SARCS_LOG_LEVEL")
        if env_level:
            logging_cfg = replace(logging_cfg, level=env_level)
        if logging_cfg.file:
            logging_cfg = replace(logging_cfg, file=str(resolve(logging_cfg.file)))

        sampling = _build(SamplingConfig, _section(raw, "sampling"), "sampling")
        env_workers = os.getenv("SARCS_MAX_WORKERS")
        if env_workers:
            try:
                sampling = replace(sampling, max_workers=int(env_workers))
            except ValueError:
                raise ConfigError(f"SARCS_MAX_WORKERS must be an integer, got {env_workers!r}.")

        radar = raw.get("radar")
        if radar is not None and not isinstance(radar, str):
            raise ConfigError("radar must be a path to a radar parameter JSON file.")

        return ExperimentConfig(
            base_dir=base_dir,
            radar_path=resolve(radar) if radar else None,
            scenes=scenes,
            noise=_build(NoiseConfig, _section(raw, "noise"), "noise"),
            mask=_build(MaskConfig, mask_raw, "mask"),
            multilook=_build(MultilookConfig, _section(raw, "multilook"), "multilook"),
            normalization=_build(NormalizationConfig, _section(raw, "normalization"), "normalization"),
            crop=_build(CropConfig, _section(raw, "crop"), "crop"),
            schedule=_build(ScheduleConfig, _section(raw, "schedule"), "schedule"),
            training=training,
            conditioning=_build(ConditioningConfig, _section(raw, "conditioning"), "conditioning"),
            tiling=_build(TilingConfig, _section(raw, "tiling"), "tiling"),
            sampling=sampling,
            seeds=seeds,
            logging=logging_cfg,
            output_dir=resolve(raw.get("output_dir", "out")),
        )


def _section(raw: dict, key: str, label: str | None = None) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{label or key}' must be a JSON object.")
    return value


_NUMBER_TYPES = {int: (int,), float: (int, float), bool: (bool,), str: (str,)}


def _build(cls, values: dict, label: str):
    """Instantiate a config dataclass, rejecting unknown keys and wrong scalar types."""
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ConfigError(f"Unknown keys in '{label}': {unknown}",
                          suggestion=f"Valid keys are {sorted(names)}.")
    defaults = cls()
    for key, value in values.items():
        expected = type(getattr(defaults, key))
        if value is None or expected not in _NUMBER_TYPES:
            continue
        if isinstance(value, bool) and expected is not bool:
            raise ConfigError(f"{label}.{key} must be {expected.__name__}, got {value!r}.")
        if not isinstance(value, _NUMBER_TYPES[expected]):
            raise ConfigError(f"{label}.{key} must be {expected.__name__}, got {value!r}.")
    try:
        built = cls(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid '{label}': {e.reason}", suggestion=e.suggestion)
    return replace(built, **{k: float(v) for k, v in values.items()
                             if type(getattr(defaults, k)) is float and isinstance(v, int)})
