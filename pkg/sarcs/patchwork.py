"""Tile planning, blended stitching, and tiled conditional reconstruction."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from sarcs.diffusion import DenoiserInterface, SamplerConfig, sample
from sarcs.exceptions import TilingError, ValidationError
from sarcs.imagery import NormalizedImage
from sarcs.log import get_logger

logger = get_logger(__name__)

DEFAULT_TILE = 256
DEFAULT_STRIDE = 64
WEIGHT_FLOOR = 0.05


def _axis_offsets(dim: int, tile: int, stride: int) -> tuple[int, ...]:
    offsets = list(range(0, dim - tile + 1, stride))
    if offsets[-1] != dim - tile:
        offsets.append(dim - tile)
    return tuple(offsets)


@dataclass(frozen=True)
class TilePlan:
    """Square tile placements in row-major order."""

    image_rows: int
    image_cols: int
    tile: int
    stride: int
    row_offsets: tuple[int, ...]
    col_offsets: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.row_offsets) * len(self.col_offsets)

    def positions(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_offsets for c in self.col_offsets]

    def extract(self, pixels: np.ndarray) -> list[np.ndarray]:
        if pixels.shape != (self.image_rows, self.image_cols):
            raise TilingError(f"image {pixels.shape} does not match plan "
                              f"{(self.image_rows, self.image_cols)}.")
        t = self.tile
        return [pixels[r:r + t, c:c + t].copy() for r, c in self.positions()]


def plan_tiles(rows: int, cols: int, tile: int = DEFAULT_TILE, stride: int = DEFAULT_STRIDE) -> TilePlan:
    """Cover rows x cols with tile x tile squares; the last offset on each axis is clamped to the edge."""
    if tile < 1 or stride < 1:
        raise TilingError(f"tile ({tile}) and stride ({stride}) must be positive.")
    if stride > tile:
        raise TilingError(f"stride {stride} exceeds tile {tile}; the plan would leave gaps.",
                          suggestion="Use a stride no larger than the tile.")
    if rows < tile or cols < tile:
        raise TilingError(f"image {rows}x{cols} is smaller than tile {tile}.",
                          suggestion="Use a smaller tile or pad the image.")
    return TilePlan(rows, cols, tile, stride,
                    _axis_offsets(rows, tile, stride), _axis_offsets(cols, tile, stride))


@dataclass(frozen=True)
class BlendWeights:
    window: np.ndarray

    @property
    def tile(self) -> int:
        return self.window.shape[0]

    @classmethod
    def raised_cosine(cls, tile: int, floor: float = WEIGHT_FLOOR) -> "BlendWeights":
        """Separable Hann window, floored so no pixel is left unweighted."""
        n = np.arange(tile)
        profile = np.maximum(0.5 - 0.5 * np.cos(2.0 * np.pi * (n + 0.5) / tile), floor)
        return cls(np.outer(profile, profile))

    @classmethod
    def uniform(cls, tile: int) -> "BlendWeights":
        return cls(np.ones((tile, tile)))


def stitch(tiles: list[np.ndarray], plan: TilePlan, weights: BlendWeights) -> np.ndarray:
    """Weighted average of overlapping tiles, summed in plan order."""
    if len(tiles) != len(plan):
        raise TilingError(f"got {len(tiles)} tiles for a plan of {len(plan)}.", index=len(tiles))
    if weights.window.shape != (plan.tile, plan.tile):
        raise TilingError(f"weight window {weights.window.shape} does not match tile {plan.tile}.")
    t = plan.tile
    total = np.zeros((plan.image_rows, plan.image_cols))
    norm = np.zeros_like(total)
    for index, ((r, c), tile) in enumerate(zip(plan.positions(), tiles)):
        tile = np.asarray(tile, dtype=np.float64)
        if tile.shape != (t, t):
            raise TilingError(f"tile shape {tile.shape}, expected {(t, t)}.", index=index)
        total[r:r + t, c:c + t] += weights.window * tile
        norm[r:r + t, c:c + t] += weights.window
    return total / norm


@dataclass(frozen=True)
class HistogramMatch:
    pixels: np.ndarray
    degenerate: bool = False


def histogram_normalize(tile: np.ndarray, reference: np.ndarray) -> HistogramMatch:
    """Map tile values onto the reference's empirical quantiles (ties share a mid-rank).

    A constant reference is degenerate: every output pixel takes its value.
    """
    values = np.asarray(tile, dtype=np.float64)
    ref = np.sort(np.asarray(reference, dtype=np.float64).ravel())
    if values.size == 0 or ref.size == 0:
        raise ValidationError("histogram normalization needs non-empty inputs.")
    if ref[0] == ref[-1]:
        logger.warning("Constant histogram reference; output is flat at %g", ref[0])
        return HistogramMatch(np.full(values.shape, ref[0]), degenerate=True)

    unique, inverse, counts = np.unique(values.ravel(), return_inverse=True, return_counts=True)
    n = values.size
    if n == 1:
        quantiles = np.array([0.5])
    else:
        first_rank = np.cumsum(counts) - counts
        quantiles = (first_rank + (counts - 1) / 2.0) / (n - 1)
    mapped = np.interp(quantiles, np.linspace(0.0, 1.0, ref.size), ref)
    return HistogramMatch(mapped[inverse.ravel()].reshape(values.shape))


def condition_stack(condition: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
    """Condition stack (K, rows, cols): the image alone, or image, footprint, and their product."""
    cond = np.asarray(condition, dtype=np.float64)
    if support is None:
        return cond[None]
    mask = np.asarray(support, dtype=np.float64)
    if mask.shape != cond.shape:
        raise ValidationError(f"footprint {mask.shape} does not match condition {cond.shape}.")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValidationError("footprint must be a 0/1 indicator.")
    return np.stack([cond, mask, cond * mask])


def reconstruct_tiled(condition: NormalizedImage, denoiser: DenoiserInterface, config: SamplerConfig,
                      plan: TilePlan, weights: BlendWeights, normalize: bool = False,
                      max_workers: int = 1, support: np.ndarray | None = None) -> NormalizedImage:
    """Sample every tile conditioned on its crop, then stitch and clamp to [-1, 1].

    With a footprint, each tile is conditioned on the crop of the channel
    stack from condition_stack. Tile i uses seed config.seed + i, so the
    result does not depend on max_workers.
    """
    crops = plan.extract(condition.pixels)
    if support is None:
        inputs = crops
    else:
        stacks = [plan.extract(channel) for channel in condition_stack(condition.pixels, support)]
        inputs = [np.stack(parts) for parts in zip(*stacks)]

    def _one(index: int) -> np.ndarray:
        crop = crops[index]
        out = sample(denoiser, inputs[index], replace(config, seed=config.seed + index), crop.shape).pixels
        if normalize:
            out = histogram_normalize(out, crop).pixels
        logger.debug("Tile %d/%d done", index + 1, len(crops))
        return out

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_one, range(len(crops))))
    else:
        results = [_one(i) for i in range(len(crops))]

    stitched = stitch(results, plan, weights)
    logger.info("Reconstructed %dx%d image from %d tiles", plan.image_rows, plan.image_cols, len(plan))
    return NormalizedImage(np.clip(stitched, -1.0, 1.0), condition.floor_db, condition.ceil_db)
