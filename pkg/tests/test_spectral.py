import numpy as np
import pytest

from qvar_common import EmptyBand, InvalidSegment, SeriesTooShort
from signal_core import Environment
from spectral import band_power, cadence_from_psd, dominant_frequency, welch_psd
from synth import Preset, generate, preset_scenario

FS = 240.0
BIN = FS / 1024


def test_white_noise_power_matches_variance():
    rng = np.random.default_rng(60)
    x = rng.normal(0.0, 2.0, int(60 * FS))
    psd = welch_psd(x, FS)
    assert float(np.sum(psd.psd) * psd.resolution_hz) == pytest.approx(4.0, rel=0.10)


def test_bin_centred_sinusoid_power():
    k = 10
    amplitude = 2.0
    t = np.arange(int(60 * FS)) / FS
    x = amplitude * np.sin(2 * np.pi * (k * BIN) * t)
    psd = welch_psd(x, FS)
    lobe = float(np.sum(psd.psd[k - 1 : k + 2]) * psd.resolution_hz)
    assert lobe == pytest.approx(amplitude**2 / 2, rel=0.05)


def test_constant_signal_has_no_power():
    psd = welch_psd(np.full(4096, 500.0), FS)
    assert np.allclose(psd.psd, 0.0, atol=1e-12)


def test_resolution():
    psd = welch_psd(np.zeros(2048), FS)
    assert psd.resolution_hz == pytest.approx(BIN)
    assert psd.freqs_hz[-1] == pytest.approx(FS / 2)


@pytest.mark.parametrize("seg_len,overlap", [(1000, 0.5), (1024, 1.0), (1024, -0.1)])
def test_invalid_segment(seg_len, overlap):
    with pytest.raises(InvalidSegment):
        welch_psd(np.zeros(4096), FS, seg_len, overlap)


def test_series_shorter_than_segment():
    with pytest.raises(SeriesTooShort):
        welch_psd(np.zeros(100), FS)


def test_larger_sinusoid_dominates():
    t = np.arange(int(60 * FS)) / FS
    x = np.sin(2 * np.pi * 1.0 * t) + 3 * np.sin(2 * np.pi * 2.0 * t)
    assert dominant_frequency(welch_psd(x, FS)) == pytest.approx(2.0, abs=BIN)


def test_band_restricts_search():
    rng = np.random.default_rng(5)
    psd = welch_psd(rng.normal(0, 1e-3, 8192), FS)
    found = dominant_frequency(psd, (100.0, 110.0))
    assert 100.0 <= found <= 110.0


def test_empty_band():
    psd = welch_psd(np.zeros(2048), FS)
    with pytest.raises(EmptyBand):
        dominant_frequency(psd, (1.0, 1.1))


def test_synthetic_walk_cadence():
    scenario = preset_scenario(
        Preset.CLEAN, Environment.PARKING_LOT, step_freq_mean_hz=1.98, step_freq_sd_hz=0.0, seed=3
    )
    series, _ = generate(scenario)
    psd = welch_psd(series.as_float(), series.fs)
    assert dominant_frequency(psd) == pytest.approx(1.98, abs=BIN)
    assert cadence_from_psd(psd) == pytest.approx(60 * 1.98, abs=60 * BIN)


def test_band_power_of_walk_concentrates_in_band(clean_walk):
    series, _ = clean_walk
    psd = welch_psd(series.as_float(), series.fs)
    in_band = band_power(psd, 0.5, 2.5)
    high = band_power(psd, 5.0, 40.0)
    assert in_band > high
