"""Tests for sarcs/focusing.py: RMA, backprojection, and multilooking."""

from dataclasses import replace

import numpy as np
import pytest

from sarcs.exceptions import FocusingError, GeometryError, ValidationError
from sarcs.focusing import (
    STOLT_TAPS,
    ComplexImage,
    IntensityImage,
    focus_backprojection,
    focus_rma,
    multilook,
    range_compress,
    range_matched_filter,
)
from sarcs.imagery import ghost_ratio
from sarcs.radar import SPEED_OF_LIGHT, PhaseHistory, Scatterer, Scene, simulate_phase_history, simulate_speckle_scene
from sarcs.sampling import apply_mask, build_mask


def _peak(image: ComplexImage) -> tuple[int, int]:
    return tuple(int(i) for i in np.unravel_index(np.argmax(np.abs(image.pixels)), image.shape))


def _expected_pixel(radar, azimuth: float, rng: float) -> tuple[float, float]:
    row = 2 * rng * radar.range_sample_rate / SPEED_OF_LIGHT
    col = azimuth / radar.azimuth_spacing + radar.num_pulses // 2
    return row, col


class TestRangeCompress:
    def test_peak_at_delay(self, desk_radar, centre_scene):
        ph = simulate_phase_history(centre_scene(desk_radar), desk_radar)
        compressed = range_compress(ph.samples, desk_radar)
        row = int(np.argmax(np.abs(compressed[:, desk_radar.num_pulses // 2])))
        expected, _ = _expected_pixel(desk_radar, 0.0, desk_radar.center_range)
        assert abs(row - expected) <= 1


class TestFocusRma:
    def test_centre_target_location(self, compact_radar, centre_scene):
        ph = simulate_phase_history(centre_scene(compact_radar), compact_radar)
        row, col = _peak(focus_rma(ph))
        exp_row, exp_col = _expected_pixel(compact_radar, 0.0, compact_radar.center_range)
        assert abs(row - exp_row) <= 1
        assert col == exp_col

    def test_offset_target_location(self, compact_radar):
        scene = Scene(scatterers=[Scatterer(1.0, 45.0)])
        row, col = _peak(focus_rma(simulate_phase_history(scene, compact_radar)))
        exp_row, exp_col = _expected_pixel(compact_radar, 1.0, 45.0)
        assert abs(row - exp_row) <= 1
        assert abs(col - exp_col) <= 1

    def test_zero_in_zero_out(self, compact_radar):
        ph = PhaseHistory(np.zeros((64, 64)), compact_radar)
        assert not focus_rma(ph).pixels.any()

    def test_linearity(self, compact_radar):
        s1 = Scene(scatterers=[Scatterer(0.0, 40.0)])
        s2 = Scene(scatterers=[Scatterer(-1.5, 60.0, 0.5, 2.0)])
        both = Scene(scatterers=s1.scatterers + s2.scatterers)
        total = focus_rma(simulate_phase_history(both, compact_radar)).pixels
        parts = (focus_rma(simulate_phase_history(s1, compact_radar)).pixels
                 + focus_rma(simulate_phase_history(s2, compact_radar)).pixels)
        assert np.linalg.norm(total - parts) <= 1e-6 * np.linalg.norm(total)

    def test_spacings(self, compact_radar):
        image = focus_rma(PhaseHistory(np.zeros((64, 64)), compact_radar))
        assert image.azimuth_spacing == compact_radar.azimuth_spacing
        assert image.range_spacing == compact_radar.range_spacing

    def test_too_small(self, compact_radar):
        tiny = replace(compact_radar, num_range_samples=8, num_pulses=8, pulse_duration=0.04e-6)
        with pytest.raises(ValidationError, match="too small"):
            focus_rma(PhaseHistory(np.zeros((8, 8)), tiny))

    def test_doppler_exceeds_prf(self, compact_radar):
        aliased = replace(compact_radar, prf=40.0)
        with pytest.raises(FocusingError, match="exceeds the PRF"):
            focus_rma(PhaseHistory(np.zeros((64, 64)), aliased))


class TestFocusBackprojection:
    def test_target_on_grid_node(self, compact_radar):
        rng = 34 * compact_radar.range_spacing
        scene = Scene(scatterers=[Scatterer(0.0, rng)])
        image = focus_backprojection(simulate_phase_history(scene, compact_radar), 64, 64)
        assert _peak(image) == (34, 32)

    def test_amplitude_linearity(self, compact_radar):
        rng = 34 * compact_radar.range_spacing
        unit = focus_backprojection(
            simulate_phase_history(Scene(scatterers=[Scatterer(0.0, rng)]), compact_radar), 64, 64)
        double = focus_backprojection(
            simulate_phase_history(Scene(scatterers=[Scatterer(0.0, rng, 2.0)]), compact_radar), 64, 64)
        assert np.abs(double.pixels).max() == pytest.approx(2 * np.abs(unit.pixels).max(), rel=1e-9)

    def test_zero_in_zero_out(self, compact_radar):
        image = focus_backprojection(PhaseHistory(np.zeros((64, 64)), compact_radar), 16, 16)
        assert not image.pixels.any()

    def test_custom_extent(self, compact_radar):
        image = focus_backprojection(PhaseHistory(np.zeros((64, 64)), compact_radar), 10, 20,
                                     range_extent=(40.0, 60.0), azimuth_extent=(-1.0, 1.0))
        assert image.shape == (10, 20)
        assert image.range_spacing == pytest.approx(2.0)
        assert image.azimuth_spacing == pytest.approx(0.1)

    def test_extent_outside_swath(self, compact_radar):
        with pytest.raises(GeometryError):
            focus_backprojection(PhaseHistory(np.zeros((64, 64)), compact_radar), 8, 8,
                                 range_extent=(0.0, 200.0))

    def test_reversed_extent(self, compact_radar):
        with pytest.raises(ValidationError, match="increasing"):
            focus_backprojection(PhaseHistory(np.zeros((64, 64)), compact_radar), 8, 8,
                                 azimuth_extent=(1.0, -1.0))


class TestOracleAgreement:
    def test_rma_matches_backprojection(self, desk_radar, centre_scene):
        """Noiseless centre target: same peak pixel and matching peak-normalized mainlobe."""
        ph = simulate_phase_history(centre_scene(desk_radar), desk_radar)
        rma = focus_rma(ph)
        bp = focus_backprojection(ph, *ph.shape)
        (r1, c1), (r2, c2) = _peak(rma), _peak(bp)
        assert abs(r1 - r2) <= 1 and abs(c1 - c2) <= 1

        window = (slice(r2 - 1, r2 + 2), slice(c2 - 1, c2 + 2))
        rma_norm = np.abs(rma.pixels[window]) / np.abs(rma.pixels).max()
        bp_norm = np.abs(bp.pixels[window]) / np.abs(bp.pixels).max()
        assert np.abs(rma_norm - bp_norm).max() < 0.1


class TestAliasing:
    def test_half_rate_comb_ghost(self, desk_radar, centre_scene):
        """A RegularAzimuth 50% mask replicates the target N/2 columns away at equal strength."""
        ph = simulate_phase_history(centre_scene(desk_radar), desk_radar)
        mask = build_mask("RegularAzimuth", 0.5, 1.0, *ph.shape)
        offset = desk_radar.num_pulses // 2

        full = multilook(focus_rma(ph), 1, 1)
        masked = multilook(focus_rma(apply_mask(ph, mask)), 1, 1)
        assert ghost_ratio(full, offset) < 0.1
        assert ghost_ratio(masked, offset) == pytest.approx(1.0, abs=0.05)


class TestMultilook:
    def test_single_look_is_power(self):
        pixels = np.array([[1 + 1j, 2], [0, -3j]])
        out = multilook(ComplexImage(pixels, 0.1, 1.5), 1, 1)
        np.testing.assert_allclose(out.pixels, [[2, 4], [0, 9]])

    def test_constant_field(self):
        out = multilook(ComplexImage(np.full((4, 4), 3.0 + 0j), 0.1, 1.5), 2, 2)
        assert out.shape == (2, 2)
        np.testing.assert_allclose(out.pixels, 9.0)

    def test_partial_blocks_averaged(self):
        pixels = np.ones((5, 7), dtype=complex)
        pixels[4, :] = 2.0
        out = multilook(ComplexImage(pixels, 0.1, 1.5), looks_azimuth=2, looks_range=2)
        assert out.shape == (3, 4)
        np.testing.assert_allclose(out.pixels[:2], 1.0)
        np.testing.assert_allclose(out.pixels[2], 4.0)

    def test_spacing_and_looks(self):
        out = multilook(ComplexImage(np.ones((8, 8)), 0.1, 1.5), looks_azimuth=4, looks_range=2)
        assert (out.looks_azimuth, out.looks_range) == (4, 2)
        assert out.azimuth_spacing == pytest.approx(0.4)
        assert out.range_spacing == pytest.approx(3.0)

    def test_too_many_looks(self):
        with pytest.raises(ValidationError, match="exceed"):
            multilook(ComplexImage(np.ones((4, 4)), 0.1, 1.5), 8, 1)

    def test_speckle_coefficient_of_variation(self):
        """20 x 4 looks of fully developed speckle: CV close to 1/sqrt(80)."""
        grid = simulate_speckle_scene(azimuth_extent=400.0, range_extent=200.0, cell_spacing=1.0,
                                      seed=21).reflectivity_grid
        out = multilook(ComplexImage(grid.values, 1.0, 1.0), looks_azimuth=20, looks_range=4)
        assert out.shape == (50, 20)
        cv = out.pixels.std() / out.pixels.mean()
        assert cv == pytest.approx(1 / np.sqrt(80), rel=0.2)


# Unitary FFTs and unit-modulus phase terms leave energy unchanged; the matched
# filter scales it by at most max|H|^2 and the Stolt resampler (row and column
# weight sums of at most taps and taps + 1) by at most taps * (taps + 1).
STOLT_ENERGY_GAIN = STOLT_TAPS * (STOLT_TAPS + 1)


class TestFocusEnergy:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_white_input_bounded(self, compact_radar, seed):
        rng = np.random.default_rng(seed)
        samples = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        out = focus_rma(PhaseHistory(samples, compact_radar)).pixels
        filter_gain = np.max(np.abs(range_matched_filter(compact_radar))) ** 2
        energy_in = np.sum(np.abs(samples) ** 2)
        assert 0 < np.sum(np.abs(out) ** 2) <= STOLT_ENERGY_GAIN * filter_gain * energy_in

    def test_point_target_bounded(self, compact_radar, centre_scene):
        ph = simulate_phase_history(centre_scene(compact_radar), compact_radar)
        out = focus_rma(ph).pixels
        filter_gain = np.max(np.abs(range_matched_filter(compact_radar))) ** 2
        assert np.sum(np.abs(out) ** 2) <= STOLT_ENERGY_GAIN * filter_gain * np.sum(np.abs(ph.samples) ** 2)


class TestIntensityImage:
    @pytest.mark.parametrize("looks", [{"looks_azimuth": 0}, {"looks_range": -2}])
    def test_rejects_non_positive_looks(self, looks):
        with pytest.raises(ValidationError):
            IntensityImage(np.ones((2, 2)), **looks)

    def test_records_looks(self):
        image = IntensityImage(np.ones((2, 2)), looks_azimuth=20, looks_range=4)
        assert (image.looks_azimuth, image.looks_range) == (20, 4)
