"""Typed artifact files: raster containers with JSON sidecars.

Every raster ``foo.f32r`` is accompanied by ``foo.f32r.json`` holding the
metadata needed to rebuild the in-memory type.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from sarcs.exceptions import RasterFormatError
from sarcs.focusing import ComplexImage, IntensityImage
from sarcs.imagery import NormalizedImage, RasterDtype, read_raster, write_raster
from sarcs.log import get_logger
from sarcs.radar import PhaseHistory, RadarParams
from sarcs.sampling import MaskPattern, SamplingMask
from sarcs.validation import safe_write_json

logger = get_logger(__name__)


def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_sidecar(path: Path, metadata: dict) -> None:
    safe_write_json(sidecar_path(path), metadata)


def read_sidecar(path: Path, kind: str) -> dict:
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RasterFormatError(path, f"missing sidecar {meta_path.name}",
                                suggestion="Regenerate the artifact with the sarcs CLI.")
    except (OSError, json.JSONDecodeError) as e:
        raise RasterFormatError(path, f"unreadable sidecar {meta_path.name}: {e}")
    if meta.get("kind") != kind:
        raise RasterFormatError(path, f"sidecar describes {meta.get('kind')!r}, expected {kind!r}")
    return meta


def save_phase_history(phase_history: PhaseHistory, path: Path) -> None:
    write_raster(phase_history.samples.astype(np.complex64), RasterDtype.CF32, path)
    write_sidecar(path, {"kind": "phase_history", "radar": phase_history.params.to_dict()})


def load_phase_history(path: Path) -> PhaseHistory:
    meta = read_sidecar(path, "phase_history")
    samples, _ = read_raster(path, RasterDtype.CF32)
    return PhaseHistory(samples=samples, params=RadarParams.from_dict(meta["radar"]))


def save_mask(mask: SamplingMask, path: Path) -> None:
    write_raster(mask.keep.astype(np.uint8), RasterDtype.U8, path)
    write_sidecar(path, {"kind": "mask", **mask.metadata()})


def load_mask(path: Path) -> SamplingMask:
    meta = read_sidecar(path, "mask")
    keep, _ = read_raster(path, RasterDtype.U8)
    return SamplingMask(keep=keep.astype(bool), pattern=MaskPattern(meta["pattern"]),
                        azimuth_ratio=meta["azimuth_ratio"], range_ratio=meta["range_ratio"],
                        seed=meta["seed"])


def save_complex_image(image: ComplexImage, path: Path) -> None:
    write_raster(image.pixels.astype(np.complex64), RasterDtype.CF32, path)
    write_sidecar(path, {"kind": "complex_image", "azimuth_spacing": image.azimuth_spacing,
                         "range_spacing": image.range_spacing})


def load_complex_image(path: Path) -> ComplexImage:
    meta = read_sidecar(path, "complex_image")
    pixels, _ = read_raster(path, RasterDtype.CF32)
    return ComplexImage(pixels, meta["azimuth_spacing"], meta["range_spacing"])


def save_intensity_image(image: IntensityImage, path: Path) -> None:
    write_raster(image.pixels.astype(np.float32), RasterDtype.F32R, path)
    write_sidecar(path, {"kind": "intensity", "looks_azimuth": image.looks_azimuth,
                         "looks_range": image.looks_range, "azimuth_spacing": image.azimuth_spacing,
                         "range_spacing": image.range_spacing})


def load_intensity_image(path: Path) -> IntensityImage:
    meta = read_sidecar(path, "intensity")
    pixels, _ = read_raster(path, RasterDtype.F32R)
    return IntensityImage(pixels, meta["looks_azimuth"], meta["looks_range"],
                          meta["azimuth_spacing"], meta["range_spacing"])


def save_normalized_image(image: NormalizedImage, path: Path) -> None:
    write_raster(image.pixels.astype(np.float32), RasterDtype.F32R, path)
    write_sidecar(path, image.metadata())


def load_normalized_image(path: Path) -> NormalizedImage:
    meta = read_sidecar(path, "normalized")
    pixels, _ = read_raster(path, RasterDtype.F32R)
    return NormalizedImage(np.clip(pixels, -1.0, 1.0), meta["floor_db"], meta["ceil_db"])


def load_image(path: Path) -> NormalizedImage | IntensityImage:
    """Load whichever real-valued image type the sidecar names."""
    kind = read_sidecar_kind(path)
    if kind == "normalized":
        return load_normalized_image(path)
    if kind == "intensity":
        return load_intensity_image(path)
    raise RasterFormatError(path, f"{kind!r} is not a real-valued image")


def read_sidecar_kind(path: Path) -> str | None:
    try:
        return json.loads(sidecar_path(path).read_text(encoding="utf-8")).get("kind")
    except (OSError, json.JSONDecodeError) as e:
        raise RasterFormatError(path, f"missing or unreadable sidecar: {e}")
