"""Denoising diffusion: linear noise schedule, forward noising, and the ancestral sampler.

Timesteps are 1-based: t runs from T down to 1 during sampling and
t = 0 denotes the clean image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from sarcs.exceptions import SamplingError, ValidationError
from sarcs.log import get_logger
from sarcs.validation import validate_positive_int

logger = get_logger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances. Arrays are stored 0-based; accessors take t in 1..T."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        b = self.betas
        if b.ndim != 1 or b.size == 0:
            raise ValidationError("schedule needs at least one step.")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValidationError("every beta must lie in (0, 1).")
        if np.any(np.diff(b) < 0):
            raise ValidationError("betas must be non-decreasing.")

    @property
    def total_steps(self) -> int:
        return int(self.betas.size)

    def check(self, t: int) -> int:
        if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or not 1 <= t <= self.total_steps:
            raise ValidationError(f"timestep {t!r} outside 1..{self.total_steps}.")
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self.check(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check(t) - 1])


def linear_schedule(total_steps: int = 1000, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    total_steps = validate_positive_int("total_steps", total_steps)
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}.",
            suggestion="The usual choice is beta_start=1e-4, beta_end=0.02.",
        )
    betas = np.linspace(beta_start, beta_end, total_steps)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


@dataclass(frozen=True)
class Latent:
    pixels: np.ndarray
    t: int


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "pixels", x), dtype=np.float64)


def q_sample(x0, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> Latent:
    """Forward noising: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    clean, noise = _array(x0), np.asarray(eps, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValidationError(f"x0 shape {clean.shape} differs from eps shape {noise.shape}.")
    alpha_bar = schedule.alpha_bar(t)
    return Latent(math.sqrt(alpha_bar) * clean + math.sqrt(1.0 - alpha_bar) * noise, int(t))


def p_step(x_t: Latent, eps_hat: np.ndarray, schedule: NoiseSchedule,
           noise: np.ndarray | None = None) -> Latent:
    """One ancestral step t -> t-1 with sigma_t^2 = beta_t; no noise is added at t = 1."""
    t = schedule.check(x_t.t)
    current, predicted = _array(x_t), np.asarray(eps_hat, dtype=np.float64)
    if current.shape != predicted.shape:
        raise ValidationError(f"x_t shape {current.shape} differs from eps_hat shape {predicted.shape}.")
    beta = schedule.beta(t)
    mean = (current - beta / math.sqrt(1.0 - schedule.alpha_bar(t)) * predicted) / math.sqrt(schedule.alpha(t))
    if t > 1 and noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != current.shape:
            raise ValidationError(f"noise shape {noise.shape} differs from x_t shape {current.shape}.")
        mean = mean + math.sqrt(beta) * noise
    return Latent(mean, t - 1)


class DenoiserInterface(Protocol):
    """Anything that predicts the injected noise from a noisy image, a step, and a condition."""

    def predict(self, noisy: np.ndarray, t: int, condition: np.ndarray | None) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule
    seed: int = 0
    variance: str = "beta"

    def __post_init__(self):
        if self.variance != "beta":
            raise ValidationError(f"unsupported variance choice {self.variance!r}; only 'beta' is available.")


def sample(denoiser: DenoiserInterface, condition, config: SamplerConfig,
           shape: tuple[int, ...]) -> Latent:
    """Run the reverse chain from pure noise at t = T down to t = 0."""
    schedule = config.schedule
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(config.seed)
    cond = None if condition is None else _array(condition)

    x = Latent(rng.standard_normal(shape), schedule.total_steps)
    for t in range(schedule.total_steps, 0, -1):
        eps_hat = np.asarray(denoiser.predict(x.pixels, t, cond))
        if eps_hat.shape != shape:
            raise SamplingError(t, f"denoiser returned shape {eps_hat.shape}, expected {shape}.",
                                suggestion="Check the denoiser patch size against the tile size.")
        if not np.all(np.isfinite(eps_hat)):
            raise SamplingError(t, "denoiser returned non-finite values.")
        noise = rng.standard_normal(shape) if t > 1 else None
        x = p_step(x, eps_hat, schedule, noise)
    return x


@dataclass(frozen=True)
class AnalyticGaussianDenoiser:
    """Exact noise predictor when every pixel of x0 is i.i.d. N(mu0, sigma0^2)."""

    mu0: float
    sigma0: float
    schedule: NoiseSchedule

    def predict(self, noisy: np.ndarray, t: int, condition: np.ndarray | None = None) -> np.ndarray:
        alpha_bar = self.schedule.alpha_bar(t)
        var0 = self.sigma0 ** 2
        total = alpha_bar * var0 + (1.0 - alpha_bar)
        residual = np.asarray(noisy, dtype=np.float64) - math.sqrt(alpha_bar) * self.mu0
        return math.sqrt(1.0 - alpha_bar) * residual / total


def analytic_gaussian_denoiser(mu0: float, sigma0: float,
                               schedule: NoiseSchedule) -> AnalyticGaussianDenoiser:
    if not math.isfinite(mu0) or not (math.isfinite(sigma0) and sigma0 > 0):
        raise ValidationError(f"need finite mu0 and sigma0 > 0, got {mu0}, {sigma0}.")
    return AnalyticGaussianDenoiser(float(mu0), float(sigma0), schedule)
