import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from signal_core import Environment  # noqa: E402
from synth import Preset, generate, preset_scenario  # noqa: E402


@pytest.fixture(scope="session")
def clean_walk():
    """Two-minute parking-lot walk, clean preset, seeded."""

    return generate(preset_scenario(Preset.CLEAN, Environment.PARKING_LOT, seed=7))


@pytest.fixture(scope="session")
def steady_walk():
    """Twenty seconds of metronomic 2 Hz steps."""

    return generate(
        preset_scenario(
            Preset.CLEAN,
            Environment.PARKING_LOT,
            duration_s=20.0,
            step_freq_mean_hz=2.0,
            step_freq_sd_hz=0.0,
            seed=11,
        )
    )


@pytest.fixture(autouse=True)
def _isolated_config(monkeypatch, tmp_path):
    empty = tmp_path / "empty_config.json"
    empty.write_text("{}\n", encoding="utf-8")
    monkeypatch.setenv("QVAR_STEPS_CONFIG", str(empty))
    for name in ("QVAR_STEPS_PROMINENCE", "QVAR_STEPS_DISTANCE", "QVAR_STEPS_WORKERS"):
        monkeypatch.delenv(name, raising=False)
