"""Conditional noise predictor: a per-timestep-bucket ridge regressor on image patches.

For a bucket b the model predicts

    eps_hat = W_b @ [vec(x_t patch) ; vec(condition channels)] + b_b

with W_b of shape (p^2, (1 + K) p^2) for K condition channels. K is 1 for
the bare condition image and 3 when the scene footprint rides along
(condition, footprint, condition * footprint). Buckets split 1..T into
equal runs; the last bucket absorbs the remainder.

Model file layout (little-endian):

    header  "<4sIIIIddd"  magic b"SARM", patch_size, bucket_count, total_steps,
                          condition_channels, ridge_lambda, beta_start, beta_end
    body    per bucket: W (p^2 x (1+K)p^2 float64, row-major) then b (p^2 float64)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy import linalg

from sarcs.config import TrainingConfig
from sarcs.diffusion import NoiseSchedule, linear_schedule
from sarcs.exceptions import ModelFormatError, TrainingError, ValidationError
from sarcs.imagery import NormalizedImage
from sarcs.log import get_logger
from sarcs.patchwork import condition_stack, plan_tiles
from sarcs.validation import atomic_write_bytes

logger = get_logger(__name__)

MODEL_MAGIC = b"SARM"
_MODEL_HEADER = struct.Struct("<4sIIIIddd")


@dataclass(frozen=True)
class TrainingPair:
    """Clean and condition images sharing one normalization, plus an optional footprint."""

    clean: NormalizedImage
    condition: NormalizedImage
    support: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.clean.shape != self.condition.shape:
            raise ValidationError(
                f"pair shapes differ: clean {self.clean.shape}, condition {self.condition.shape}.")
        if (self.clean.floor_db, self.clean.ceil_db) != (self.condition.floor_db, self.condition.ceil_db):
            raise ValidationError("clean and condition images must share floor_db and ceil_db.")
        if self.support is not None and np.shape(self.support) != self.clean.shape:
            raise ValidationError(
                f"footprint {np.shape(self.support)} does not match pair {self.clean.shape}.")

    @cached_property
    def channels(self) -> np.ndarray:
        return condition_stack(self.condition.pixels, self.support)

    @property
    def channel_count(self) -> int:
        return 1 if self.support is None else 3


@dataclass(frozen=True)
class PatchRegressor:
    patch_size: int
    total_steps: int
    ridge_lambda: float
    weights: np.ndarray      # (B, p^2, (1 + K) p^2)
    biases: np.ndarray       # (B, p^2)
    beta_start: float = 1e-4
    beta_end: float = 0.02
    condition_channels: int = 1
    fallback_buckets: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        d = self.feature_size
        k = self.condition_channels
        b = self.weights.shape[0] if self.weights.ndim == 3 else -1
        if k < 1:
            raise ValidationError(f"condition_channels must be >= 1, got {k}.")
        if self.weights.shape != (b, d, (1 + k) * d) or self.biases.shape != (b, d):
            raise ValidationError(
                f"weights {self.weights.shape} / biases {self.biases.shape} do not fit patch "
                f"{self.patch_size} with {k} condition channel(s).")
        if not 1 <= b <= self.total_steps:
            raise ValidationError(f"bucket count {b} must lie in 1..{self.total_steps}.")

    @property
    def feature_size(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def bucket_count(self) -> int:
        return int(self.weights.shape[0])

    def bucket_of(self, t: int) -> int:
        return bucket_index(t, self.total_steps, self.bucket_count)

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.total_steps, self.beta_start, self.beta_end)


def bucket_index(t: int, total_steps: int, bucket_count: int) -> int:
    if not 1 <= t <= total_steps:
        raise ValidationError(f"timestep {t} outside 1..{total_steps}.")
    size = total_steps // bucket_count
    return min((int(t) - 1) // size, bucket_count - 1)


def extract_training_patch(pair: TrainingPair, patch_size: int,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Co-located clean patch (p, p) and condition channels (K, p, p) at a uniformly random offset."""
    rows, cols = pair.clean.shape
    if patch_size < 1 or patch_size > rows or patch_size > cols:
        raise ValidationError(
            f"patch_size {patch_size} does not fit a {rows}x{cols} pair.",
            suggestion="Use a smaller patch or crop/pad the images.",
        )
    r = int(rng.integers(0, rows - patch_size + 1))
    c = int(rng.integers(0, cols - patch_size + 1))
    window = (slice(r, r + patch_size), slice(c, c + patch_size))
    return pair.clean.pixels[window].copy(), pair.channels[(slice(None),) + window].copy()


class RidgeAccumulator:
    """Streaming sufficient statistics for a centred ridge regression."""

    def __init__(self, n_features: int, n_targets: int):
        self.count = 0
        self.sum_x = np.zeros(n_features)
        self.sum_y = np.zeros(n_targets)
        self.xtx = np.zeros((n_features, n_features))
        self.xty = np.zeros((n_features, n_targets))

    def add(self, features: np.ndarray, targets: np.ndarray) -> None:
        if features.shape[0] == 0:
            return
        self.count += features.shape[0]
        self.sum_x += features.sum(axis=0)
        self.sum_y += targets.sum(axis=0)
        self.xtx += features.T @ features
        self.xty += features.T @ targets

    def normal_equations(self, ridge_lambda: float) -> tuple[np.ndarray, np.ndarray]:
        """Centred system (Sxx + lambda I, Sxy) whose solution is W^T."""
        n = self.count
        mean_x = self.sum_x / n
        mean_y = self.sum_y / n
        sxx = self.xtx - n * np.outer(mean_x, mean_x)
        sxy = self.xty - n * np.outer(mean_x, mean_y)
        return sxx + ridge_lambda * np.eye(sxx.shape[0]), sxy

    def solve(self, ridge_lambda: float, bucket: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Return (W, b) with W of shape (n_targets, n_features)."""
        system, rhs = self.normal_equations(ridge_lambda)
        if ridge_lambda == 0 and np.linalg.matrix_rank(system) < system.shape[0]:
            raise TrainingError("normal equations are rank-deficient with ridge_lambda = 0.",
                                bucket=bucket, suggestion="Use a positive ridge_lambda or more samples.")
        try:
            solution = linalg.solve(system, rhs, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as e:
            raise TrainingError(f"ridge system could not be solved: {e}", bucket=bucket,
                                suggestion="Use a positive ridge_lambda.")
        weights = solution.T
        return weights, self.sum_y / self.count - weights @ (self.sum_x / self.count)


def _draw_samples(pair: TrainingPair, schedule: NoiseSchedule, patch_size: int, count: int,
                  rng: np.random.Generator, t_range: tuple[int, int] | None = None):
    d = patch_size * patch_size
    clean = np.empty((count, d))
    cond = np.empty((count, pair.channel_count * d))
    for i in range(count):
        c_patch, k_patch = extract_training_patch(pair, patch_size, rng)
        clean[i] = c_patch.ravel()
        cond[i] = k_patch.ravel()
    low, high = t_range or (1, schedule.total_steps)
    steps = rng.integers(low, high + 1, size=count)
    eps = rng.standard_normal((count, d))
    alpha_bar = schedule.alpha_bars[steps - 1][:, None]
    noisy = np.sqrt(alpha_bar) * clean + np.sqrt(1.0 - alpha_bar) * eps
    return np.hstack([noisy, cond]), eps, steps


def train_regressor(pairs: list[TrainingPair], schedule: NoiseSchedule,
                    config: TrainingConfig) -> PatchRegressor:
    """Fit one ridge regressor per timestep bucket on random patches from every pair."""
    if not pairs:
        raise TrainingError("no training pairs supplied.")
    total = schedule.total_steps
    p, buckets = config.patch_size, config.bucket_count
    if p < 1:
        raise TrainingError(f"patch_size must be >= 1, got {p}.")
    if not 1 <= buckets <= total:
        raise TrainingError(f"bucket_count {buckets} must lie in 1..{total}.",
                            suggestion="Use fewer buckets than diffusion steps.")
    if config.ridge_lambda < 0:
        raise TrainingError(f"ridge_lambda must be >= 0, got {config.ridge_lambda}.")
    if config.samples_per_pair < 1:
        raise TrainingError("samples_per_pair must be >= 1.")
    k = pairs[0].channel_count
    if any(pair.channel_count != k for pair in pairs):
        raise TrainingError("pairs mix footprint-conditioned and bare conditions.",
                            suggestion="Attach a footprint to every pair or to none.")

    d = p * p
    accumulators = [RidgeAccumulator((1 + k) * d, d) for _ in range(buckets)]
    rng = np.random.default_rng(config.seed)
    size = total // buckets
    for pair in pairs:
        features, targets, steps = _draw_samples(pair, schedule, p, config.samples_per_pair, rng)
        owner = np.minimum((steps - 1) // size, buckets - 1)
        for b, acc in enumerate(accumulators):
            chosen = owner == b
            acc.add(features[chosen], targets[chosen])

    weights = np.empty((buckets, d, (1 + k) * d))
    biases = np.empty((buckets, d))
    fallback = []
    for b, acc in enumerate(accumulators):
        if acc.count == 0:
            logger.warning("Bucket %d received no samples; using identity fallback", b)
            weights[b] = np.hstack([np.eye(d), np.zeros((d, k * d))])
            biases[b] = 0.0
            fallback.append(b)
            continue
        weights[b], biases[b] = acc.solve(config.ridge_lambda, bucket=b)
        logger.debug("Bucket %d fitted on %d samples", b, acc.count)

    # linear_schedule endpoints are exact, so these recover the training schedule.
    model = PatchRegressor(
        patch_size=p, total_steps=total, ridge_lambda=float(config.ridge_lambda),
        weights=weights, biases=biases,
        beta_start=float(schedule.betas[0]), beta_end=float(schedule.betas[-1]),
        condition_channels=k, fallback_buckets=tuple(fallback),
    )
    logger.info("Trained patch regressor: patch=%d, buckets=%d, channels=%d, pairs=%d",
                p, buckets, k, len(pairs))
    return model


def predict_eps(model: PatchRegressor, x_t_patch: np.ndarray, t: int,
                condition_patch: np.ndarray | None) -> np.ndarray:
    """Predict noise for one patch or a stack of patches (..., p, p).

    The condition is (..., K, p, p); a single-channel model also takes (..., p, p).
    """
    x = np.asarray(x_t_patch, dtype=np.float64)
    p, k = model.patch_size, model.condition_channels
    if x.shape[-2:] != (p, p):
        raise ValidationError(f"patch shape {x.shape[-2:]} does not match model patch {p}.")
    expected = x.shape[:-2] + (k, p, p)
    if condition_patch is None:
        cond = np.zeros(expected)
    else:
        cond = np.asarray(condition_patch, dtype=np.float64)
        if k == 1 and cond.shape == x.shape:
            cond = cond[..., None, :, :]
    if cond.shape != expected:
        raise ValidationError(f"condition shape {cond.shape} does not match {expected} for x_t {x.shape}.")
    b = model.bucket_of(t)
    d = model.feature_size
    features = np.hstack([x.reshape(-1, d), cond.reshape(-1, k * d)])
    return (features @ model.weights[b].T + model.biases[b]).reshape(x.shape)


@lru_cache(maxsize=32)
def _patch_index(rows: int, cols: int, patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat pixel indices of every patch (n, p^2) and per-pixel coverage counts."""
    plan = plan_tiles(rows, cols, patch, patch)
    local = (np.arange(patch)[:, None] * cols + np.arange(patch)[None, :]).ravel()
    index = np.array([r * cols + c + local for r, c in plan.positions()])
    coverage = np.bincount(index.ravel(), minlength=rows * cols).astype(np.float64)
    return index, coverage


class PatchDenoiser:
    """DenoiserInterface over whole tiles: patches on a stride-p grid, overlaps averaged.

    The condition is a tile (rows, cols) or a channel stack (K, rows, cols).
    """

    def __init__(self, model: PatchRegressor):
        self.model = model

    def predict(self, noisy: np.ndarray, t: int, condition: np.ndarray | None) -> np.ndarray:
        x = np.asarray(noisy, dtype=np.float64)
        rows, cols = x.shape
        p, k = self.model.patch_size, self.model.condition_channels
        index, coverage = _patch_index(rows, cols, p)
        if condition is None:
            cond = np.zeros((k, rows, cols))
        else:
            cond = np.asarray(condition, dtype=np.float64)
            if cond.ndim == 2:
                cond = cond[None]
        if cond.shape != (k, rows, cols):
            raise ValidationError(f"condition {cond.shape} does not fit a {k}-channel model on "
                                  f"a {rows}x{cols} tile.")
        patches = x.ravel()[index].reshape(-1, p, p)
        cond_patches = cond.reshape(k, -1)[:, index].transpose(1, 0, 2).reshape(-1, k, p, p)
        eps = predict_eps(self.model, patches, t, cond_patches)
        total = np.bincount(index.ravel(), weights=eps.ravel(), minlength=rows * cols)
        return (total / coverage).reshape(rows, cols)


def evaluate_eps_mse(model: PatchRegressor, pairs: list[TrainingPair], schedule: NoiseSchedule,
                     samples_per_pair: int = 500, seed: int = 0,
                     t_range: tuple[int, int] | None = None) -> float:
    """Mean squared noise-prediction error on fresh random patches."""
    if not pairs:
        raise ValidationError("evaluation needs at least one pair.")
    if any(pair.channel_count != model.condition_channels for pair in pairs):
        raise ValidationError(f"model expects {model.condition_channels} condition channel(s).")
    rng = np.random.default_rng(seed)
    errors = []
    for pair in pairs:
        features, targets, steps = _draw_samples(pair, schedule, model.patch_size, samples_per_pair,
                                                 rng, t_range)
        owner = np.array([model.bucket_of(int(t)) for t in steps])
        predicted = np.einsum("nij,nj->ni", model.weights[owner], features) + model.biases[owner]
        errors.append(np.mean((predicted - targets) ** 2, axis=1))
    return float(np.mean(np.concatenate(errors)))


def save_model(model: PatchRegressor, path: Path) -> None:
    header = _MODEL_HEADER.pack(MODEL_MAGIC, model.patch_size, model.bucket_count, model.total_steps,
                                model.condition_channels, model.ridge_lambda, model.beta_start,
                                model.beta_end)
    body = b"".join(
        model.weights[b].astype("<f8").tobytes() + model.biases[b].astype("<f8").tobytes()
        for b in range(model.bucket_count)
    )
    atomic_write_bytes(Path(path), header + body)
    logger.info("Saved model to %s", path)


def load_model(path: Path) -> PatchRegressor:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ModelFormatError(path, f"cannot read file: {e}")
    if len(data) < _MODEL_HEADER.size:
        raise ModelFormatError(path, f"header needs {_MODEL_HEADER.size} bytes, file has {len(data)}")
    magic, p, buckets, total, k, ridge, beta_start, beta_end = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(path, f"bad magic {magic!r}")
    if p == 0 or buckets == 0 or total == 0 or k == 0 or buckets > total:
        raise ModelFormatError(path, f"inconsistent header: patch={p}, buckets={buckets}, "
                                     f"steps={total}, channels={k}")
    d = p * p
    n_w = d * (1 + k) * d
    per_bucket = (n_w + d) * 8
    body = data[_MODEL_HEADER.size:]
    if len(body) != buckets * per_bucket:
        raise ModelFormatError(path, f"expected {buckets * per_bucket} payload bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").reshape(buckets, n_w + d)
    try:
        return PatchRegressor(
            patch_size=p, total_steps=total, ridge_lambda=ridge,
            weights=values[:, :n_w].reshape(buckets, d, (1 + k) * d).astype(np.float64),
            biases=values[:, n_w:].astype(np.float64),
            beta_start=beta_start, beta_end=beta_end, condition_channels=k,
        )
    except ValidationError as e:
        raise ModelFormatError(path, e.reason)
