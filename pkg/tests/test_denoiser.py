"""Tests for sarcs/denoiser.py: the bucketed ridge patch regressor."""

import numpy as np
import pytest
from scipy import ndimage, stats

from sarcs.config import TrainingConfig
from sarcs.denoiser import (
    PatchDenoiser,
    PatchRegressor,
    RidgeAccumulator,
    TrainingPair,
    bucket_index,
    evaluate_eps_mse,
    extract_training_patch,
    load_model,
    predict_eps,
    save_model,
    train_regressor,
)
from sarcs.diffusion import SamplerConfig, linear_schedule
from sarcs.exceptions import ModelFormatError, TrainingError, ValidationError
from sarcs.imagery import NormalizedImage, psnr
from sarcs.patchwork import BlendWeights, plan_tiles, reconstruct_tiled


def _image(pixels) -> NormalizedImage:
    return NormalizedImage(np.asarray(pixels, dtype=float), -30.0, 0.0)


def _smooth_field(rng, size=32) -> np.ndarray:
    return np.clip(4.0 * ndimage.gaussian_filter(rng.standard_normal((size, size)), 2.0), -0.95, 0.95)


def _identity_model(patch: int, buckets: int = 2, total: int = 10, channels: int = 1) -> PatchRegressor:
    d = patch * patch
    weights = np.tile(np.hstack([np.eye(d), np.zeros((d, channels * d))]), (buckets, 1, 1))
    return PatchRegressor(patch, total, 1e-3, weights, np.zeros((buckets, d)), condition_channels=channels)


def _band(size: int = 32) -> np.ndarray:
    """0/1 footprint covering the middle half of the columns."""
    support = np.zeros((size, size))
    support[:, size // 4:3 * size // 4] = 1.0
    return support


def _ghosted_pair(rng, support: np.ndarray) -> TrainingPair:
    """Scene content inside the footprint, a dim floor outside, and the content
    copied half a width across into the condition."""
    field = _smooth_field(rng, support.shape[0])
    floor = np.clip(-0.8 + 0.05 * rng.standard_normal(support.shape), -1.0, 1.0)
    clean = np.where(support == 1.0, field, floor)
    ghost = np.roll(field, support.shape[1] // 2, axis=1)
    condition = np.where(support == 1.0, field, ghost)
    return TrainingPair(_image(clean), _image(condition), support)


@pytest.fixture
def pairs():
    rng = np.random.default_rng(0)
    out = []
    for _ in range(3):
        clean = _image(rng.uniform(-1, 1, (16, 16)))
        condition = _image(np.clip(clean.pixels + 0.2 * rng.standard_normal((16, 16)), -1, 1))
        out.append(TrainingPair(clean, condition))
    return out


class TestBucketIndex:
    @pytest.mark.parametrize("t,total,buckets,expected", [
        (1, 1000, 10, 0), (100, 1000, 10, 0), (101, 1000, 10, 1), (1000, 1000, 10, 9),
        (10, 10, 3, 2), (9, 10, 3, 2), (1, 5, 1, 0),
    ])
    def test_mapping(self, t, total, buckets, expected):
        assert bucket_index(t, total, buckets) == expected

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            bucket_index(0, 10, 2)


class TestExtractTrainingPatch:
    def test_full_size_patch(self, pairs):
        clean, cond = extract_training_patch(pairs[0], 16, np.random.default_rng(0))
        np.testing.assert_array_equal(clean, pairs[0].clean.pixels)
        assert cond.shape == (1, 16, 16)
        np.testing.assert_array_equal(cond[0], pairs[0].condition.pixels)

    def test_co_located(self):
        pixels = np.arange(64, dtype=float).reshape(8, 8) / 64
        pair = TrainingPair(_image(pixels), _image(-pixels))
        clean, cond = extract_training_patch(pair, 3, np.random.default_rng(4))
        np.testing.assert_array_equal(cond[0], -clean)

    def test_offsets_uniform(self):
        """Every row and column offset is equally likely."""
        pixels = np.arange(32 * 32, dtype=float).reshape(32, 32) / 1024
        pair = TrainingPair(_image(pixels), _image(pixels))
        rng = np.random.default_rng(9)
        rows, cols = np.zeros(25), np.zeros(25)
        for _ in range(5000):
            patch, _ = extract_training_patch(pair, 8, rng)
            index = int(round(patch[0, 0] * 1024))
            rows[index // 32] += 1
            cols[index % 32] += 1
        assert stats.chisquare(rows).pvalue > 0.001
        assert stats.chisquare(cols).pvalue > 0.001

    def test_patch_too_large(self, pairs):
        with pytest.raises(ValidationError, match="does not fit"):
            extract_training_patch(pairs[0], 17, np.random.default_rng(0))

    def test_footprint_channels(self):
        pixels = np.linspace(-1, 1, 64).reshape(8, 8)
        support = np.zeros((8, 8))
        support[2:6, 2:6] = 1.0
        pair = TrainingPair(_image(pixels), _image(pixels), support)
        assert pair.channel_count == 3
        _, cond = extract_training_patch(pair, 8, np.random.default_rng(0))
        np.testing.assert_array_equal(cond[1], support)
        np.testing.assert_array_equal(cond[2], pixels * support)

    def test_footprint_shape_checked(self):
        with pytest.raises(ValidationError, match="footprint"):
            TrainingPair(_image(np.zeros((8, 8))), _image(np.zeros((8, 8))), np.ones((4, 8)))

    def test_footprint_must_be_indicator(self):
        pair = TrainingPair(_image(np.zeros((8, 8))), _image(np.zeros((8, 8))), np.full((8, 8), 0.5))
        with pytest.raises(ValidationError, match="0/1"):
            extract_training_patch(pair, 4, np.random.default_rng(0))


class TestRidgeAccumulator:
    def test_recovers_affine_map(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((500, 3))
        w_true = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]])
        b_true = np.array([0.3, -0.7])
        y = x @ w_true.T + b_true
        acc = RidgeAccumulator(3, 2)
        acc.add(x[:200], y[:200])
        acc.add(x[200:], y[200:])
        acc.add(x[:0], y[:0])
        w, b = acc.solve(1e-9)
        np.testing.assert_allclose(w, w_true, atol=1e-6)
        np.testing.assert_allclose(b, b_true, atol=1e-6)

    def test_rank_deficient_without_ridge(self):
        rng = np.random.default_rng(2)
        col = rng.standard_normal((50, 1))
        acc = RidgeAccumulator(2, 1)
        acc.add(np.hstack([col, col]), rng.standard_normal((50, 1)))
        with pytest.raises(TrainingError, match="rank-deficient") as exc_info:
            acc.solve(0.0, bucket=3)
        assert exc_info.value.bucket == 3

    def test_normal_equation_residual(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((600, 32))
        y = x[:, :16] @ rng.standard_normal((16, 16)) + 0.3 * rng.standard_normal((600, 16))
        acc = RidgeAccumulator(32, 16)
        acc.add(x, y)
        system, rhs = acc.normal_equations(1e-3)
        w, _ = acc.solve(1e-3)
        residual = np.linalg.norm(system @ w.T - rhs) / np.linalg.norm(rhs)
        assert residual < 1e-8


class TestTrainRegressor:
    def test_heavy_ridge_shrinks_to_mean(self):
        """With a huge penalty the model collapses to the mean noise, which is near zero."""
        rng = np.random.default_rng(3)
        pair = TrainingPair(_image(rng.uniform(-1, 1, (16, 16))), _image(rng.uniform(-1, 1, (16, 16))))
        config = TrainingConfig(patch_size=4, bucket_count=1, ridge_lambda=1e6, samples_per_pair=4000)
        model = train_regressor([pair], linear_schedule(1000), config)
        assert np.abs(model.weights).max() < 0.05
        assert np.abs(model.biases).max() < 0.1

    def test_condition_equal_to_clean_late_steps(self, schedule):
        """Near t = T, noise is almost all of x_t and is easy to predict."""
        rng = np.random.default_rng(4)
        clean = [_image(_smooth_field(rng, 16)) for _ in range(3)]
        pairs = [TrainingPair(c, c) for c in clean]
        config = TrainingConfig(patch_size=4, bucket_count=10, samples_per_pair=2000)
        model = train_regressor(pairs, schedule, config)
        assert evaluate_eps_mse(model, pairs, schedule, t_range=(900, 1000)) < 0.1

    def test_deterministic(self, pairs, schedule):
        config = TrainingConfig(patch_size=4, bucket_count=5, samples_per_pair=500, seed=7)
        a = train_regressor(pairs, schedule, config)
        b = train_regressor(pairs, schedule, config)
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.biases.tobytes() == b.biases.tobytes()

    def test_empty_buckets_fall_back(self, pairs, schedule):
        config = TrainingConfig(patch_size=4, bucket_count=10, samples_per_pair=1)
        model = train_regressor(pairs[:1], schedule, config)
        assert len(model.fallback_buckets) == 9
        b = model.fallback_buckets[0]
        np.testing.assert_array_equal(model.weights[b][:, :16], np.eye(16))

    def test_schedule_recorded(self, pairs):
        schedule = linear_schedule(50, 2e-4, 0.05)
        model = train_regressor(pairs, schedule, TrainingConfig(patch_size=4, bucket_count=5,
                                                               samples_per_pair=200))
        np.testing.assert_allclose(model.schedule().betas, schedule.betas)

    def test_rejections(self, pairs, schedule):
        with pytest.raises(TrainingError, match="no training pairs"):
            train_regressor([], schedule, TrainingConfig())
        with pytest.raises(TrainingError, match="bucket_count"):
            train_regressor(pairs, linear_schedule(5), TrainingConfig(patch_size=4, bucket_count=6))
        with pytest.raises(TrainingError, match="ridge_lambda"):
            train_regressor(pairs, schedule, TrainingConfig(patch_size=4, ridge_lambda=-1.0))

    def test_informative_condition_beats_independent(self, schedule):
        """Held-out noise error is lower when the condition carries the clean image."""
        rng = np.random.default_rng(12)
        clean = [_image(_smooth_field(rng)) for _ in range(6)]
        informative = [TrainingPair(c, _image(np.clip(c.pixels + 0.05 * rng.standard_normal((32, 32)), -1, 1)))
                       for c in clean]
        independent = [TrainingPair(c, _image(_smooth_field(rng))) for c in clean]
        config = TrainingConfig(patch_size=4, bucket_count=10, samples_per_pair=2000)
        errors = [
            evaluate_eps_mse(train_regressor(group[:4], schedule, config), group[4:], schedule,
                             samples_per_pair=2000, seed=5)
            for group in (informative, independent)
        ]
        assert errors[0] < errors[1]

    def test_mixed_channels_rejected(self, pairs, schedule):
        footprinted = TrainingPair(pairs[0].clean, pairs[0].condition, np.ones((16, 16)))
        with pytest.raises(TrainingError, match="mix"):
            train_regressor([pairs[1], footprinted], schedule, TrainingConfig(patch_size=4))

    def test_footprint_channels_recorded(self, schedule):
        rng = np.random.default_rng(13)
        pairs = [_ghosted_pair(rng, _band(16)) for _ in range(2)]
        model = train_regressor(pairs, schedule, TrainingConfig(patch_size=4, bucket_count=5,
                                                                samples_per_pair=500))
        assert model.condition_channels == 3
        assert model.weights.shape == (5, 16, 64)
        with pytest.raises(ValidationError, match="condition channel"):
            evaluate_eps_mse(model, [TrainingPair(pairs[0].clean, pairs[0].condition)], schedule)


class TestPredictEps:
    def test_zero_weights(self):
        model = PatchRegressor(2, 10, 1e-3, np.zeros((1, 4, 8)), np.zeros((1, 4)))
        assert not predict_eps(model, np.ones((2, 2)), 5, np.ones((2, 2))).any()

    def test_identity_weights(self):
        x = np.array([[0.1, -0.2], [0.3, 0.4]])
        np.testing.assert_allclose(predict_eps(_identity_model(2), x, 7, None), x)

    def test_batched_patches(self):
        x = np.random.default_rng(0).standard_normal((5, 2, 2))
        assert predict_eps(_identity_model(2), x, 3, x).shape == (5, 2, 2)

    def test_wrong_patch(self):
        with pytest.raises(ValidationError):
            predict_eps(_identity_model(2), np.ones((3, 3)), 1, None)

    def test_footprint_channels(self):
        model = _identity_model(2, channels=3)
        x = np.random.default_rng(1).standard_normal((4, 2, 2))
        np.testing.assert_allclose(predict_eps(model, x, 3, np.ones((4, 3, 2, 2))), x)

    def test_footprint_model_rejects_bare_condition(self):
        with pytest.raises(ValidationError, match="condition shape"):
            predict_eps(_identity_model(2, channels=3), np.ones((2, 2)), 1, np.ones((2, 2)))


class TestPatchDenoiser:
    def test_identity_model_returns_input(self):
        noisy = np.random.default_rng(5).standard_normal((13, 10))
        out = PatchDenoiser(_identity_model(4)).predict(noisy, 2, np.zeros_like(noisy))
        np.testing.assert_allclose(out, noisy, atol=1e-12)

    def test_reconstructs_clean_condition(self, schedule):
        """Trained on smooth images with condition = clean, sampling given the clean image returns it."""
        rng = np.random.default_rng(6)
        pairs = [TrainingPair(c, c) for c in (_image(_smooth_field(rng)) for _ in range(4))]
        model = train_regressor(pairs, schedule, TrainingConfig(patch_size=8, bucket_count=10,
                                                                samples_per_pair=2000))
        held_out = _image(_smooth_field(rng))
        recon = reconstruct_tiled(held_out, PatchDenoiser(model), SamplerConfig(schedule, seed=1),
                                  plan_tiles(32, 32, 16, 8), BlendWeights.raised_cosine(16))
        assert psnr(recon, held_out) >= 20.0

    def test_footprint_suppresses_ghost(self, schedule):
        """With the footprint as extra channels the sampler drops content copied outside it."""
        rng = np.random.default_rng(14)
        support = _band()
        pairs = [_ghosted_pair(rng, support) for _ in range(4)]
        model = train_regressor(pairs, schedule, TrainingConfig(patch_size=8, bucket_count=10,
                                                                samples_per_pair=2000))
        held_out = _ghosted_pair(rng, support)
        recon = reconstruct_tiled(held_out.condition, PatchDenoiser(model), SamplerConfig(schedule, seed=1),
                                  plan_tiles(32, 32, 16, 8), BlendWeights.raised_cosine(16),
                                  support=support)
        outside = support == 0.0
        recon_error = np.abs(recon.pixels - held_out.clean.pixels)[outside].mean()
        cond_error = np.abs(held_out.condition.pixels - held_out.clean.pixels)[outside].mean()
        assert recon_error < 0.5 * cond_error
        assert psnr(recon, held_out.clean) > psnr(held_out.condition, held_out.clean)

    def test_channel_stack_checked(self):
        denoiser = PatchDenoiser(_identity_model(4, channels=3))
        noisy = np.zeros((8, 8))
        assert denoiser.predict(noisy, 2, np.zeros((3, 8, 8))).shape == (8, 8)
        with pytest.raises(ValidationError, match="3-channel"):
            denoiser.predict(noisy, 2, np.zeros((8, 8)))


class TestModelFile:
    def test_round_trip(self, tmp_path, pairs, schedule):
        model = train_regressor(pairs, schedule, TrainingConfig(patch_size=4, bucket_count=3,
                                                                samples_per_pair=300))
        save_model(model, tmp_path / "model.sarm")
        loaded = load_model(tmp_path / "model.sarm")
        assert loaded.weights.tobytes() == model.weights.tobytes()
        assert loaded.biases.tobytes() == model.biases.tobytes()
        assert (loaded.patch_size, loaded.total_steps, loaded.ridge_lambda) == (4, 1000, model.ridge_lambda)
        assert (loaded.beta_start, loaded.beta_end) == (model.beta_start, model.beta_end)

    def test_round_trip_with_footprint_channels(self, tmp_path):
        model = _identity_model(2, buckets=3, channels=3)
        save_model(model, tmp_path / "model.sarm")
        loaded = load_model(tmp_path / "model.sarm")
        assert loaded.condition_channels == 3
        assert loaded.weights.tobytes() == model.weights.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.sarm"
        save_model(_identity_model(2), path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(ModelFormatError, match="bad magic"):
            load_model(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.sarm"
        save_model(_identity_model(2), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ModelFormatError, match="payload bytes"):
            load_model(path)

    def test_missing(self, tmp_path):
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "absent.sarm")
