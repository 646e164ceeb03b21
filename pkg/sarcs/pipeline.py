"""Pipeline stages: pair generation, training, tiled reconstruction, and evaluation.

Each cmd_* function is the library form of one CLI subcommand. Output
layout under the experiment's output directory:

    manifest.json                 pair manifest
    pairs/pair_NNN_*.f32r         normalized and intensity rasters (+ .json sidecars)
    models/model.sarm             trained patch regressor
    reconstructions/pair_NNN.f32r reconstructions of held-out pairs
    reports/pair_NNN.json         per-pair metric reports
    summary.json                  all-in-one run summary
    data/events.json              stage event log
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from sarcs.artifacts import (
    load_normalized_image, save_intensity_image, save_normalized_image,
)
from sarcs.config import ExperimentConfig
from sarcs.denoiser import (
    PatchDenoiser, TrainingPair, evaluate_eps_mse, load_model, save_model, train_regressor,
)
from sarcs.diffusion import SamplerConfig, linear_schedule
from sarcs.events import EventLog, emit
from sarcs.exceptions import (
    ConfigError, FocusingError, GeometryError, MaskError, PipelineError, RasterError,
    TilingError, ValidationError,
)
from sarcs.focusing import ComplexImage, focus_rma, multilook
from sarcs.imagery import (
    NormalizedImage, RasterDtype, crop_or_pad, dynamic_range, export_pgm, ghost_ratio, psnr,
    read_raster, ssim, to_intensity, to_normalized,
)
from sarcs.log import get_logger
from sarcs.patchwork import BlendWeights, plan_tiles, reconstruct_tiled
from sarcs.radar import RadarParams, Scene, simulate_phase_history, simulate_speckle_scene
from sarcs.sampling import apply_mask, build_mask
from sarcs.validation import load_json, safe_write_json

logger = get_logger(__name__)

MANIFEST_VERSION = 1
FLOOR_SEED_OFFSET = 1_000_000


@dataclass
class PairEntry:
    id: int
    label: str
    clean: str
    condition: str
    clean_intensity: str
    condition_intensity: str
    rows: int
    cols: int
    floor_db: float
    ceil_db: float
    seeds: dict = field(default_factory=dict)


@dataclass
class PairManifest:
    entries: list[PairEntry] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    radar: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def save(self, path: Path) -> None:
        safe_write_json(Path(path), {
            "version": MANIFEST_VERSION,
            "radar": self.radar,
            "settings": self.settings,
            "entries": [asdict(e) for e in self.entries],
            "errors": self.errors,
        })

    @classmethod
    def load(cls, path: Path) -> "PairManifest":
        raw = load_json(path, "pair manifest")
        if not isinstance(raw, dict) or raw.get("version") != MANIFEST_VERSION:
            raise PipelineError("manifest", f"{path} is not a version {MANIFEST_VERSION} pair manifest.")
        try:
            entries = [PairEntry(**e) for e in raw.get("entries", [])]
        except TypeError as e:
            raise PipelineError("manifest", f"malformed entry in {path}: {e}")
        return cls(entries=entries, errors=raw.get("errors", []), radar=raw.get("radar", {}),
                   settings=raw.get("settings", {}))


@dataclass
class TrainReport:
    model_path: str
    pairs_used: int
    pairs_held_out: int
    pairs_skipped: int
    heldout_eps_mse: float
    fallback_buckets: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def holdout_count(total: int, fraction: float) -> int:
    """Trailing entries kept out of training; at least one pair always trains."""
    if total < 2 or fraction <= 0:
        return 0
    return min(int(math.floor(total * fraction + 0.5)), total - 1)


def _collect_scenes(config: ExperimentConfig, radar: RadarParams) -> list[tuple[str, Scene, int | None]]:
    scenes: list[tuple[str, Scene, int | None]] = []
    for path in config.scenes.files:
        if not Path(path).exists():
            raise ConfigError(f"Scene file not found: {path}", suggestion="Fix scenes.files.")
        scenes.append((Path(path).stem, Scene.load(path), None))
    speckle = config.scenes.speckle
    if speckle.count:
        az_extent, rg_extent, spacing = speckle.resolve(radar)
        for i in range(speckle.count):
            seed = config.seeds.scene + i
            scene = simulate_speckle_scene(az_extent, rg_extent, spacing, seed,
                                           range_center=radar.center_range,
                                           point_targets=speckle.point_targets,
                                           target_amplitude=speckle.target_amplitude)
            scenes.append((f"speckle_{seed}", scene, seed))
    if not scenes:
        raise ConfigError("No scenes configured.",
                          suggestion="Add scenes.files or set scenes.speckle.count.")
    return scenes


def footprint_support(config: ExperimentConfig, radar: RadarParams) -> np.ndarray:
    """0/1 map of the scene footprint on the multilooked (and cropped) image grid.

    The footprint is the scenes.speckle extent centred on azimuth 0 and the
    scene-centre range, grown by conditioning.footprint_margin pixels.
    """
    az_extent, rg_extent, _ = config.scenes.speckle.resolve(radar)
    azimuth = (np.arange(radar.num_pulses) - radar.num_pulses // 2) * radar.azimuth_spacing
    ranges = radar.range_axis()
    inside = np.outer(np.abs(ranges - radar.center_range) <= rg_extent / 2.0,
                      np.abs(azimuth) <= az_extent / 2.0)
    looks = config.multilook
    image = multilook(ComplexImage(inside.astype(np.complex128), radar.azimuth_spacing, radar.range_spacing),
                      looks.azimuth, looks.range)
    if config.crop.enabled:
        image = crop_or_pad(image, config.crop.rows, config.crop.cols)
    support = image.pixels > 0
    margin = config.conditioning.footprint_margin
    if margin and support.any():
        support = ndimage.binary_dilation(support, structure=np.ones((3, 3), dtype=bool), iterations=margin)
    return support.astype(np.float64)


def _generate_pair(index: int, label: str, scene: Scene, scene_seed: int | None,
                   radar: RadarParams, config: ExperimentConfig, pairs_dir: Path) -> PairEntry:
    seeds = {
        "scene": scene_seed,
        "noise": config.seeds.noise + index,
        "mask": config.seeds.mask + index,
        "noise_floor": config.seeds.noise + FLOOR_SEED_OFFSET + index,
    }
    phase_history = simulate_phase_history(scene, radar, config.noise.thermal_sigma, seeds["noise"])
    mask = build_mask(config.mask.pattern, config.mask.azimuth_ratio, config.mask.range_ratio,
                      radar.num_range_samples, radar.num_pulses, seeds["mask"])
    masked = apply_mask(phase_history, mask, config.noise.floor_sigma, seeds["noise_floor"])

    looks = config.multilook
    clean_img = multilook(focus_rma(phase_history), looks.azimuth, looks.range)
    cond_img = multilook(focus_rma(masked), looks.azimuth, looks.range)
    if config.crop.enabled:
        clean_img = crop_or_pad(clean_img, config.crop.rows, config.crop.cols)
        cond_img = crop_or_pad(cond_img, config.crop.rows, config.crop.cols)

    floor_db, ceil_db = dynamic_range(clean_img, config.normalization.low_percentile,
                                      config.normalization.high_percentile)
    clean = to_normalized(clean_img, floor_db, ceil_db)
    condition = to_normalized(cond_img, floor_db, ceil_db)

    stem = f"pair_{index:03d}"
    names = {
        "clean": f"{stem}_clean.f32r",
        "condition": f"{stem}_condition.f32r",
        "clean_intensity": f"{stem}_clean_intensity.f32r",
        "condition_intensity": f"{stem}_condition_intensity.f32r",
    }
    save_normalized_image(clean, pairs_dir / names["clean"])
    save_normalized_image(condition, pairs_dir / names["condition"])
    save_intensity_image(clean_img, pairs_dir / names["clean_intensity"])
    save_intensity_image(cond_img, pairs_dir / names["condition_intensity"])

    rows, cols = clean.shape
    return PairEntry(
        id=index, label=label, rows=rows, cols=cols, floor_db=floor_db, ceil_db=ceil_db, seeds=seeds,
        **{k: f"pairs/{v}" for k, v in names.items()},
    )


def cmd_pairgen(config: ExperimentConfig, event_log: EventLog | None = None) -> PairManifest:
    """Simulate, subsample, focus, multilook, and normalize one (clean, condition) pair per scene.

    A failing scene is recorded in the manifest and skipped; the stage fails
    only when no pair could be produced.
    """
    radar = config.load_radar()
    scenes = _collect_scenes(config, radar)
    out = Path(config.output_dir)
    manifest = PairManifest(radar=radar.to_dict(), settings={
        "mask": {"pattern": config.mask.pattern.value, "azimuth_ratio": config.mask.azimuth_ratio,
                 "range_ratio": config.mask.range_ratio},
        "multilook": {"azimuth": config.multilook.azimuth, "range": config.multilook.range},
        "noise": {"thermal_sigma": config.noise.thermal_sigma, "noise_floor_sigma": config.noise.floor_sigma},
    })

    for index, (label, scene, scene_seed) in enumerate(scenes):
        try:
            entry = _generate_pair(index, label, scene, scene_seed, radar, config, out / "pairs")
        except (GeometryError, ValidationError, FocusingError, MaskError, RasterError) as e:
            logger.error("Pair %d (%s) failed: %s", index, label, e)
            manifest.errors.append({"id": index, "label": label, "error": str(e)})
            emit(event_log, "pairgen.pair_failed", f"pairgen:{label}", id=index, error=str(e))
            continue
        manifest.entries.append(entry)
        logger.info("Wrote pair %d (%s): %dx%d", index, label, entry.rows, entry.cols)
        emit(event_log, "pairgen.pair_written", f"pairgen:{label}", id=index,
             condition=entry.condition)

    manifest.save(out / "manifest.json")
    if not manifest.entries:
        raise PipelineError("pairgen", f"all {len(scenes)} pairs failed; see {out / 'manifest.json'}.")
    return manifest


def _load_pair(entry: PairEntry, root: Path, support: np.ndarray | None = None) -> TrainingPair:
    images = []
    for rel in (entry.clean, entry.condition):
        path = root / rel
        _, header = read_raster(path, RasterDtype.F32R)
        if (header.rows, header.cols) != (entry.rows, entry.cols):
            raise PipelineError(
                "train", f"{path} is {header.rows}x{header.cols} but the manifest records "
                         f"{entry.rows}x{entry.cols}.",
                suggestion="Regenerate the pairs with 'sarcs pairgen'.")
        images.append(load_normalized_image(path))
    if support is not None and support.shape != images[0].shape:
        raise PipelineError("train", f"footprint {support.shape} does not match pair {entry.id} "
                                     f"{images[0].shape}.",
                            suggestion="Regenerate the pairs with 'sarcs pairgen'.")
    return TrainingPair(clean=images[0], condition=images[1], support=support)


def load_pairs(manifest_path: Path,
               support: np.ndarray | None = None) -> tuple[list[tuple[PairEntry, TrainingPair]], int]:
    """Readable pairs in manifest order and the number skipped as unreadable."""
    manifest_path = Path(manifest_path)
    manifest = PairManifest.load(manifest_path)
    if not manifest.entries:
        raise PipelineError("train", f"{manifest_path} lists no pairs.")
    pairs, skipped = [], 0
    for entry in manifest.entries:
        try:
            pairs.append((entry, _load_pair(entry, manifest_path.parent, support)))
        except RasterError as e:
            logger.warning("Skipping unreadable pair %d: %s", entry.id, e)
            skipped += 1
    if not pairs:
        raise PipelineError("train", "no readable pairs remain after skipping unreadable entries.")
    return pairs, skipped


def cmd_train(manifest_path: Path, config: ExperimentConfig, model_path: Path,
              event_log: EventLog | None = None) -> TrainReport:
    """Fit the patch regressor on the leading pairs and score the held-out tail."""
    support = footprint_support(config, config.load_radar()) if config.conditioning.footprint else None
    loaded, skipped = load_pairs(manifest_path, support)
    pairs = [pair for _, pair in loaded]
    held = holdout_count(len(pairs), config.training.holdout_fraction)
    train_pairs = pairs[:len(pairs) - held]
    eval_pairs = pairs[len(pairs) - held:] or train_pairs

    schedule = linear_schedule(config.schedule.steps, config.schedule.beta_start, config.schedule.beta_end)
    model = train_regressor(train_pairs, schedule, config.training)
    mse = evaluate_eps_mse(model, eval_pairs, schedule, samples_per_pair=min(500, config.training.samples_per_pair),
                           seed=config.training.seed + 1)
    save_model(model, model_path)

    report = TrainReport(
        model_path=str(model_path), pairs_used=len(train_pairs), pairs_held_out=held,
        pairs_skipped=skipped, heldout_eps_mse=mse, fallback_buckets=list(model.fallback_buckets),
    )
    logger.info("Held-out eps MSE %.4f over %d pair(s)", mse, len(eval_pairs))
    emit(event_log, "train.completed", f"train:{Path(model_path).name}", **report.to_dict())
    return report


def cmd_reconstruct(condition_path: Path, model_path: Path, config: ExperimentConfig,
                    output_path: Path, pgm_path: Path | None = None,
                    event_log: EventLog | None = None) -> NormalizedImage:
    """Tile-wise conditional sampling of a condition image with a trained model."""
    condition = load_normalized_image(condition_path)
    model = load_model(model_path)
    rows, cols = condition.shape
    tile, stride = config.tiling.resolve(rows, cols)
    if rows < tile or cols < tile:
        raise TilingError(f"condition image {rows}x{cols} is smaller than tile {tile}.",
                          suggestion="Pass a smaller --tile or crop/pad the image.")
    if tile < model.patch_size:
        raise TilingError(f"tile {tile} is smaller than the model patch {model.patch_size}.")

    support = None
    if model.condition_channels > 1:
        support = footprint_support(config, config.load_radar())
        if support.shape != condition.shape:
            raise PipelineError(
                "reconstruct", f"footprint {support.shape} does not match condition {condition.shape}.",
                suggestion="Reconstruct with the experiment document the model was trained under.")

    plan = plan_tiles(rows, cols, tile, stride)
    sampler = SamplerConfig(schedule=model.schedule(), seed=config.seeds.sampling)
    result = reconstruct_tiled(condition, PatchDenoiser(model), sampler, plan,
                               BlendWeights.raised_cosine(tile), normalize=config.tiling.histnorm,
                               max_workers=config.sampling.max_workers, support=support)
    save_normalized_image(result, output_path)
    if pgm_path is not None:
        export_pgm(result, pgm_path)
    emit(event_log, "reconstruct.completed", f"reconstruct:{Path(output_path).name}",
         tiles=len(plan), rows=rows, cols=cols)
    return result


def _metrics(image: NormalizedImage, clean: NormalizedImage, offset: int) -> dict:
    return {
        "psnr": psnr(image, clean),
        "ssim": ssim(image, clean),
        "ghost_ratio": ghost_ratio(to_intensity(image), offset),
    }


def cmd_eval(reconstruction_path: Path, clean_path: Path, condition_path: Path,
             report_path: Path | None = None, azimuth_offset: int | None = None,
             event_log: EventLog | None = None) -> dict:
    """PSNR and SSIM against the clean image, plus ghost ratios, for condition and reconstruction."""
    reconstruction = load_normalized_image(reconstruction_path)
    clean = load_normalized_image(clean_path)
    condition = load_normalized_image(condition_path)
    offset = clean.shape[1] // 2 if azimuth_offset is None else azimuth_offset
    report = {
        "azimuth_offset": offset,
        "clean": {"ghost_ratio": ghost_ratio(to_intensity(clean), offset)},
        "condition": _metrics(condition, clean, offset),
        "reconstruction": _metrics(reconstruction, clean, offset),
    }
    if report_path is not None:
        safe_write_json(Path(report_path), report)
    emit(event_log, "eval.completed", f"eval:{Path(reconstruction_path).name}",
         psnr_gain=report["reconstruction"]["psnr"] - report["condition"]["psnr"])
    return report


def run_experiment(config: ExperimentConfig, event_log: EventLog | None = None) -> dict:
    """pairgen, train, then reconstruct and evaluate every held-out pair."""
    out = Path(config.output_dir)
    manifest = cmd_pairgen(config, event_log)
    manifest_path = out / "manifest.json"
    model_path = out / "models" / "model.sarm"
    train_report = cmd_train(manifest_path, config, model_path, event_log)

    loaded, _ = load_pairs(manifest_path)
    held = holdout_count(len(loaded), config.training.holdout_fraction)
    evaluated = []
    for entry, _ in loaded[len(loaded) - held:]:
        recon_path = out / "reconstructions" / f"pair_{entry.id:03d}.f32r"
        cmd_reconstruct(out / entry.condition, model_path, config, recon_path, event_log=event_log)
        report = cmd_eval(recon_path, out / entry.clean, out / entry.condition,
                          out / "reports" / f"pair_{entry.id:03d}.json", event_log=event_log)
        evaluated.append({"id": entry.id, "label": entry.label, **report})

    summary = {
        "train": train_report.to_dict(),
        "pairs_generated": len(manifest.entries),
        "pairs_failed": len(manifest.errors),
        "evaluated": evaluated,
    }
    if evaluated:
        summary["mean"] = {
            stage: {metric: float(np.mean([r[stage][metric] for r in evaluated]))
                    for metric in ("psnr", "ssim", "ghost_ratio")}
            for stage in ("condition", "reconstruction")
        }
    safe_write_json(out / "summary.json", summary)
    return summary

