"""Shared test fixtures."""

import json
import logging
import math

import numpy as np
import pytest

from sarcs.diffusion import linear_schedule
from sarcs.events import close_run_logs
from sarcs.log import ROOT_LOGGER
from sarcs.radar import RadarParams, Scatterer, Scene


SMALL_EXPERIMENT = {
    "radar": "radar.json",
    "scenes": {"speckle": {"count": 3, "cell_spacing": 0.4}},
    "noise": {"thermal_sigma": 1.0},
    "mask": {"pattern": "RegularAzimuth", "azimuth_ratio": 0.5},
    "multilook": {"azimuth": 2, "range": 2},
    "schedule": {"steps": 50},
    "training": {
        "patch_size": 8,
        "bucket_count": 5,
        "samples_per_pair": 300,
        "holdout_fraction": 0.34,
    },
    "tiling": {"tile": 16, "stride": 8},
    "output_dir": "out",
}


@pytest.fixture(autouse=True)
def _reset_run_state():
    """Close TinyDB run logs and drop handlers bound to captured streams."""
    yield
    close_run_logs()
    root = logging.getLogger(ROOT_LOGGER)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


@pytest.fixture
def compact_radar():
    return RadarParams.compact()


@pytest.fixture
def desk_radar():
    return RadarParams.desk_default()


@pytest.fixture
def centre_scene():
    """Single unit scatterer at azimuth 0 on the scene-centre range of the radar it is used with."""
    def _scene(radar: RadarParams, amplitude: float = 1.0) -> Scene:
        return Scene(scatterers=[Scatterer(0.0, radar.center_range, amplitude)])
    return _scene


@pytest.fixture
def schedule():
    return linear_schedule(1000, 1e-4, 0.02)


class EchoDenoiser:
    """Predicts exactly the noise separating x_t from the condition, so sampling returns the condition."""

    def __init__(self, schedule):
        self.schedule = schedule

    def predict(self, noisy, t, condition):
        alpha_bar = self.schedule.alpha_bar(t)
        return (np.asarray(noisy) - math.sqrt(alpha_bar) * condition) / math.sqrt(1.0 - alpha_bar)


@pytest.fixture
def echo_denoiser():
    """Factory: EchoDenoiser bound to a schedule."""
    return EchoDenoiser


@pytest.fixture
def write_experiment(tmp_path):
    """Factory fixture writing radar.json (compact) and experiment.json with section overrides."""
    def _write(overrides: dict | None = None, name: str = "experiment.json", radar=None):
        (radar or RadarParams.compact()).save(tmp_path / "radar.json")
        doc = json.loads(json.dumps(SMALL_EXPERIMENT))
        for key, value in (overrides or {}).items():
            if value is None:
                doc.pop(key, None)
            elif isinstance(value, dict) and isinstance(doc.get(key), dict):
                doc[key].update(value)
            else:
                doc[key] = value
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2))
        return path
    return _write
