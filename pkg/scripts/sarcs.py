#!/usr/bin/env python3
"""sarcs: CLI for the compressive SAR diffusion pipeline."""

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from sarcs.artifacts import (
    load_complex_image, load_image, load_phase_history, save_complex_image, save_intensity_image,
    save_mask, save_phase_history,
)
from sarcs.config import ExperimentConfig
from sarcs.events import EventLog
from sarcs.exceptions import (
    ConfigError, ExportError, FocusingError, GeometryError, MaskError, ModelFormatError,
    PipelineError, RasterError, SamplingError, TilingError, TrainingError, ValidationError,
)
from sarcs.focusing import focus_backprojection, focus_rma, multilook as multilook_image
from sarcs.imagery import export_pgm
from sarcs.log import setup_logging
from sarcs.pipeline import cmd_eval, cmd_pairgen, cmd_reconstruct, cmd_train, run_experiment
from sarcs.radar import RadarParams, Scene, simulate_phase_history
from sarcs.sampling import MaskPattern, apply_mask, build_mask

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_EXIT_CODES = (
    ((ConfigError, ValidationError, MaskError), EXIT_USAGE),
    ((RasterError, ModelFormatError, GeometryError, TilingError, PipelineError, ExportError), EXIT_DATA),
    ((TrainingError, SamplingError, FocusingError), EXIT_NUMERICAL),
)
PIPELINE_ERRORS = tuple(cls for group, _ in _EXIT_CODES for cls in group)


def exit_code_for(error: Exception) -> int:
    for classes, code in _EXIT_CODES:
        if isinstance(error, classes):
            return code
    return EXIT_DATA


def _fail(error: Exception) -> None:
    click.echo(f"Error: {error}", err=True)
    sys.exit(exit_code_for(error))


class PipelineGroup(click.Group):
    """Click group whose usage errors exit with the configuration-error code."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            rv = super().main(*args, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        sys.exit(rv if isinstance(rv, int) else 0)


def _config(ctx) -> ExperimentConfig:
    """Experiment document from --config (or defaults), with --output-dir applied."""
    if "config" not in ctx.obj:
        path = ctx.obj["config_path"]
        try:
            config = ExperimentConfig.load(path) if path else ExperimentConfig()
        except ConfigError as e:
            _fail(e)
        if ctx.obj["output_dir"] is not None:
            config = config.with_output_dir(ctx.obj["output_dir"])
        if path and not ctx.obj["verbose"]:
            log_file = Path(config.logging.file) if config.logging.file else None
            setup_logging(level=config.logging.level, log_file=log_file)
        ctx.obj["config"] = config
    return ctx.obj["config"]


def _override(section, **values):
    """Replace only the fields whose CLI flag was given."""
    given = {k: v for k, v in values.items() if v is not None}
    return replace(section, **given) if given else section


def _radar(ctx, radar_path: Path | None) -> RadarParams:
    if radar_path is not None:
        return RadarParams.load(radar_path)
    return _config(ctx).load_radar()


@click.group(cls=PipelineGroup)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Experiment document (JSON)")
@click.option("--output-dir", type=click.Path(path_type=Path), default=None,
              help="Override the document's output_dir")
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
@click.pass_context
def cli(ctx, config_path, output_dir, verbose):
    """sarcs: compressive SAR phase histories, focusing, and diffusion reconstruction."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["output_dir"] = output_dir
    ctx.obj["verbose"] = verbose
    setup_logging(level="DEBUG" if verbose else "INFO")


@cli.command()
@click.option("--scene", "scene_path", type=click.Path(path_type=Path), required=True,
              help="Scene JSON file")
@click.option("--radar", "radar_path", type=click.Path(path_type=Path), default=None,
              help="Radar parameter JSON (defaults to the document's radar)")
@click.option("--sigma", type=float, default=None, help="Thermal noise std")
@click.option("--seed", type=int, default=None, help="Noise seed")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.pass_context
def simulate(ctx, scene_path, radar_path, sigma, seed, out_path):
    """Simulate a raw phase history (cf32) from a scene."""
    try:
        config = _config(ctx)
        radar = _radar(ctx, radar_path)
        phase_history = simulate_phase_history(
            Scene.load(scene_path), radar,
            config.noise.thermal_sigma if sigma is None else sigma,
            config.seeds.noise if seed is None else seed,
        )
        save_phase_history(phase_history, out_path)
    except PIPELINE_ERRORS as e:
        _fail(e)
    rows, cols = phase_history.shape
    click.echo(f"Wrote {rows}x{cols} phase history to {out_path}")


@cli.command()
@click.option("--pattern", type=click.Choice([p.value for p in MaskPattern]), default=None)
@click.option("--azimuth-ratio", type=float, default=None)
@click.option("--range-ratio", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--rows", type=int, default=None, help="Mask rows (defaults to the radar's range samples)")
@click.option("--cols", type=int, default=None, help="Mask cols (defaults to the radar's pulses)")
@click.option("--apply", "apply_path", type=click.Path(path_type=Path), default=None,
              help="Phase history to subsample with the new mask")
@click.option("--noise-floor", type=float, default=None, help="Std of noise placed in dropped samples")
@click.option("--masked-out", type=click.Path(path_type=Path), default=None,
              help="Where to write the subsampled phase history")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.pass_context
def mask(ctx, pattern, azimuth_ratio, range_ratio, seed, rows, cols, apply_path, noise_floor,
         masked_out, out_path):
    """Build a sampling mask (u8), optionally applying it to a phase history."""
    try:
        config = _config(ctx)
        settings = _override(config.mask, pattern=MaskPattern(pattern) if pattern else None,
                             azimuth_ratio=azimuth_ratio, range_ratio=range_ratio)
        phase_history = load_phase_history(apply_path) if apply_path else None
        if phase_history is not None:
            rows, cols = phase_history.shape
        elif rows is None or cols is None:
            radar = config.load_radar()
            rows = radar.num_range_samples if rows is None else rows
            cols = radar.num_pulses if cols is None else cols
        mask_seed = config.seeds.mask if seed is None else seed
        built = build_mask(settings.pattern, settings.azimuth_ratio, settings.range_ratio,
                           rows, cols, mask_seed)
        save_mask(built, out_path)
        if phase_history is not None:
            target = masked_out or out_path.with_name(out_path.stem + "_masked.cf32")
            floor = config.noise.floor_sigma if noise_floor is None else noise_floor
            save_phase_history(apply_mask(phase_history, built, floor, mask_seed), target)
            click.echo(f"Wrote masked phase history to {target}")
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(f"Wrote {settings.pattern.value} mask ({built.ratio:.3f}) to {out_path}")


@cli.command()
@click.argument("phase_history_path", type=click.Path(path_type=Path))
@click.option("--method", type=click.Choice(["rma", "backprojection"]), default="rma")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.pass_context
def focus(ctx, phase_history_path, method, out_path):
    """Focus a phase history into a complex image (cf32)."""
    try:
        phase_history = load_phase_history(phase_history_path)
        if method == "rma":
            image = focus_rma(phase_history)
        else:
            image = focus_backprojection(phase_history, *phase_history.shape)
        save_complex_image(image, out_path)
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(f"Focused ({method}) to {out_path}")


@cli.command()
@click.argument("image_path", type=click.Path(path_type=Path))
@click.option("--looks-az", type=int, default=None)
@click.option("--looks-rg", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.pass_context
def multilook(ctx, image_path, looks_az, looks_rg, out_path):
    """Multilook a complex image into an intensity image (f32r)."""
    try:
        looks = _override(_config(ctx).multilook, azimuth=looks_az, range=looks_rg)
        image = multilook_image(load_complex_image(image_path), looks.azimuth, looks.range)
        save_intensity_image(image, out_path)
    except PIPELINE_ERRORS as e:
        _fail(e)
    rows, cols = image.shape
    click.echo(f"Wrote {rows}x{cols} intensity image to {out_path}")


def _event_log(config: ExperimentConfig) -> EventLog:
    log = EventLog.for_output(config.output_dir)
    log.on("pairgen.pair_written", lambda e: click.echo(f"  pair {e.data['id']}: {e.source}"))
    log.on("pairgen.pair_failed", lambda e: click.echo(f"  pair {e.data['id']} FAILED: {e.source}", err=True))
    return log


@cli.command()
@click.option("--count", type=int, default=None, help="Number of speckle scenes")
@click.pass_context
def pairgen(ctx, count):
    """Generate (clean, condition) training pairs and a manifest."""
    try:
        config = _config(ctx)
        if count is not None:
            config = replace(config, scenes=replace(
                config.scenes, speckle=replace(config.scenes.speckle, count=count)))
        manifest = cmd_pairgen(config, _event_log(config))
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(f"Generated {len(manifest.entries)} pair(s), {len(manifest.errors)} failed; "
               f"manifest at {Path(config.output_dir) / 'manifest.json'}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), default=None)
@click.option("--model-out", type=click.Path(path_type=Path), default=None)
@click.option("--patch-size", type=int, default=None)
@click.option("--buckets", "bucket_count", type=int, default=None)
@click.option("--ridge", "ridge_lambda", type=float, default=None)
@click.option("--samples", "samples_per_pair", type=int, default=None)
@click.option("--steps", type=int, default=None, help="Diffusion steps T")
@click.option("--seed", type=int, default=None)
@click.pass_context
def train(ctx, manifest_path, model_out, patch_size, bucket_count, ridge_lambda, samples_per_pair,
          steps, seed):
    """Train the conditional patch regressor from a pair manifest."""
    try:
        config = _config(ctx)
        config = replace(
            config,
            training=_override(config.training, patch_size=patch_size, bucket_count=bucket_count,
                               ridge_lambda=ridge_lambda, samples_per_pair=samples_per_pair, seed=seed),
            schedule=_override(config.schedule, steps=steps),
        )
        out = Path(config.output_dir)
        report = cmd_train(manifest_path or out / "manifest.json", config,
                           model_out or out / "models" / "model.sarm", _event_log(config))
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(f"Model written to {report.model_path}")
    click.echo(f"Trained on {report.pairs_used} pair(s); held-out eps MSE {report.heldout_eps_mse:.4f}")
    if report.fallback_buckets:
        click.echo(f"Fallback buckets: {report.fallback_buckets}")


@cli.command()
@click.argument("condition_path", type=click.Path(path_type=Path))
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--pgm", "pgm_path", type=click.Path(path_type=Path), default=None)
@click.option("--tile", type=int, default=None)
@click.option("--stride", type=int, default=None)
@click.option("--histnorm/--no-histnorm", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", "max_workers", type=int, default=None)
@click.pass_context
def reconstruct(ctx, condition_path, model_path, out_path, pgm_path, tile, stride, histnorm, seed,
                max_workers):
    """Reconstruct a condition image tile by tile with a trained model."""
    try:
        config = _config(ctx)
        config = replace(
            config,
            tiling=_override(config.tiling, tile=tile, stride=stride, histnorm=histnorm),
            seeds=_override(config.seeds, sampling=seed),
            sampling=_override(config.sampling, max_workers=max_workers),
        )
        result = cmd_reconstruct(condition_path, model_path, config, out_path, pgm_path,
                                 _event_log(config))
    except PIPELINE_ERRORS as e:
        _fail(e)
    rows, cols = result.shape
    click.echo(f"Reconstructed {rows}x{cols} image to {out_path}")


@cli.command(name="eval")
@click.argument("reconstruction_path", type=click.Path(path_type=Path))
@click.argument("clean_path", type=click.Path(path_type=Path))
@click.argument("condition_path", type=click.Path(path_type=Path))
@click.option("--out", "report_path", type=click.Path(path_type=Path), default=None)
@click.option("--offset", "azimuth_offset", type=int, default=None,
              help="Ghost offset in columns (defaults to half the width)")
@click.pass_context
def eval_(ctx, reconstruction_path, clean_path, condition_path, report_path, azimuth_offset):
    """Report PSNR, SSIM, and ghost ratios as JSON."""
    try:
        report = cmd_eval(reconstruction_path, clean_path, condition_path, report_path, azimuth_offset)
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(json.dumps(report, indent=2))


@cli.command(name="export-pgm")
@click.argument("image_path", type=click.Path(path_type=Path))
@click.argument("pgm_path", type=click.Path(path_type=Path))
def export_pgm_cmd(image_path, pgm_path):
    """Export a normalized or intensity raster as a 16-bit PGM."""
    try:
        export_pgm(load_image(image_path), pgm_path)
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(f"Wrote {pgm_path}")


@cli.command()
@click.pass_context
def run(ctx):
    """Run pairgen, train, reconstruct, and eval in one go."""
    try:
        config = _config(ctx)
        summary = run_experiment(config, _event_log(config))
    except PIPELINE_ERRORS as e:
        _fail(e)
    click.echo(f"Generated {summary['pairs_generated']} pair(s); evaluated {len(summary['evaluated'])}")
    mean = summary.get("mean")
    if mean:
        click.echo(f"Mean PSNR: condition {mean['condition']['psnr']:.2f} dB, "
                   f"reconstruction {mean['reconstruction']['psnr']:.2f} dB")
    click.echo(f"Summary at {Path(config.output_dir) / 'summary.json'}")


if __name__ == "__main__":
    cli()
