import json

import numpy as np
import pytest

from counter import (
    CONFIRM_MARGIN_S,
    StreamingCounter,
    count_steps_batch,
    count_streaming,
    filtered_signal,
)
from dsp_filter import BandpassSpec, FilterMode
from peak_detect import PeakParams, detect_peaks
from qvar_common import CounterClosed, GapsPresent, InvalidSpec, SeriesTooShort
from signal_core import Environment, SampleSeries
from synth import Preset, generate, preset_scenario

DEFAULT = PeakParams(300, 100)


def test_clean_walk_160_steps():
    scenario = preset_scenario(
        Preset.CLEAN,
        Environment.PARKING_LOT,
        step_freq_mean_hz=160 / 120,
        step_freq_sd_hz=0.0,
        step_amplitude_counts=800.0,
        seed=21,
    )
    series, truth = generate(scenario)
    assert truth.step_count == 160
    report = count_steps_batch(series, params=DEFAULT, truth=truth.step_count)
    assert 156 <= report.count <= 164
    assert report.accuracy >= 0.975


def test_default_preset_accuracy(clean_walk):
    series, truth = clean_walk
    report = count_steps_batch(series, params=DEFAULT, truth=truth.step_count)
    assert report.accuracy >= 0.95
    assert report.count == len(report.step_indices)
    assert list(report.step_indices) == sorted(report.step_indices)


def test_all_zero_series_has_no_steps():
    series = SampleSeries(samples=np.zeros(int(120 * 240), dtype=int))
    assert count_steps_batch(series).count == 0


def test_accuracy_from_measured_and_truth(monkeypatch):
    import counter

    monkeypatch.setattr(
        counter, "detect_peaks", lambda x, params: [type("P", (), {"index": i})() for i in range(170)]
    )
    series = SampleSeries(samples=np.zeros(2000, dtype=int))
    report = count_steps_batch(series, truth=160)
    assert report.count == 170
    assert report.to_dict()["accuracy_2dp"] == "0.94"


def test_report_document(clean_walk):
    series, truth = clean_walk
    report = count_steps_batch(series, params=DEFAULT, truth=truth.step_count)
    document = json.loads(report.to_json())
    assert document["count"] == report.count
    assert document["params"] == {"prominence": 300.0, "distance": 100}
    assert document["filter_mode"] == "ZeroPhase"
    assert document["truth"] == truth.step_count
    assert set(document) >= {"count", "step_indices", "params", "filter_mode", "accuracy"}


def test_report_without_truth_omits_accuracy(clean_walk):
    series, _ = clean_walk
    document = count_steps_batch(series, params=DEFAULT).to_dict()
    assert "accuracy" not in document and "truth" not in document


def test_short_series():
    with pytest.raises(SeriesTooShort):
        count_steps_batch(SampleSeries(samples=np.zeros(100, dtype=int)))


def test_rate_mismatch():
    series = SampleSeries(samples=np.zeros(2000, dtype=int), sample_rate_hz=100)
    with pytest.raises(InvalidSpec):
        count_steps_batch(series, BandpassSpec(fs_hz=240.0))


def test_gaps_need_override(clean_walk):
    series, truth = clean_walk
    gapped = SampleSeries(samples=series.samples, gap_indices=(len(series) // 2,))
    with pytest.raises(GapsPresent):
        count_steps_batch(gapped, params=DEFAULT)

    report = count_steps_batch(gapped, params=DEFAULT, truth=truth.step_count, allow_gaps=True)
    assert report.accuracy >= 0.95


def test_gap_split_skips_short_segments(clean_walk, capsys):
    series, _ = clean_walk
    gapped = SampleSeries(samples=series.samples, gap_indices=(100,))
    report = count_steps_batch(gapped, params=DEFAULT, allow_gaps=True)
    assert all(index >= 100 for index in report.step_indices)
    assert "too short" in capsys.readouterr().err


def test_determinism(clean_walk):
    series, _ = clean_walk
    assert count_steps_batch(series).to_json() == count_steps_batch(series).to_json()


def test_chunking_does_not_change_emissions(steady_walk):
    series, _ = steady_walk
    values = series.as_float()

    whole = StreamingCounter(params=DEFAULT)
    expected = whole.push_samples(values) + whole.finalize()

    single = StreamingCounter(params=DEFAULT)
    received = []
    for value in values:
        received.extend(single.push_samples([value]))
    received.extend(single.finalize())

    assert [event.absolute_index for event in received] == [event.absolute_index for event in expected]
    assert len(expected) > 30


def test_empty_chunk_changes_nothing():
    counter = StreamingCounter()
    assert counter.push_samples([]) == []
    assert counter.samples_received == 0
    assert counter.finalize() == []


def test_finalized_counter_is_closed():
    counter = StreamingCounter()
    counter.finalize()
    with pytest.raises(CounterClosed):
        counter.push_samples([1, 2, 3])


def test_tail_peak_waits_for_finalize(steady_walk):
    series, _ = steady_walk
    params = PeakParams(200, 100)
    causal = filtered_signal(series, mode=FilterMode.CAUSAL)
    candidates = [peak.index for peak in detect_peaks(causal, params) if peak.index < len(series) - 200]
    last = candidates[-1]
    end = last + 100

    counter = StreamingCounter(params=params)
    pushed = counter.push_samples(series.as_float()[:end])
    flushed = counter.finalize()
    assert last not in [event.absolute_index for event in pushed]
    assert last in [event.absolute_index for event in flushed]


def _assert_well_formed(indices, distance):
    assert all(b > a for a, b in zip(indices, indices[1:]))
    assert len(set(indices)) == len(indices)
    assert all(b - a >= distance for a, b in zip(indices, indices[1:]))


@pytest.mark.parametrize("preset", [Preset.CLEAN, Preset.NOISY])
def test_streaming_agrees_with_causal_batch(preset):
    for seed in range(25):
        series, _ = generate(preset_scenario(preset, Environment.PARKING_LOT, seed=seed))
        events = count_streaming(series, params=DEFAULT)
        indices = [event.absolute_index for event in events]
        _assert_well_formed(indices, DEFAULT.distance_min)
        batch = count_steps_batch(series, params=DEFAULT, mode=FilterMode.CAUSAL)
        assert abs(len(indices) - batch.count) <= 2, (preset, seed)


def test_streaming_prominence_is_reported(steady_walk):
    series, _ = steady_walk
    events = count_streaming(series, params=DEFAULT, chunk_len=17)
    assert events
    assert all(event.prominence >= DEFAULT.prominence_min for event in events)
    assert events[0].time_s(series.fs) == pytest.approx(events[0].absolute_index / 240)


@pytest.mark.parametrize("params", [PeakParams(300, 100), PeakParams(250, 60)])
def test_streaming_emits_within_distance_plus_margin(clean_walk, params):
    series, _ = clean_walk
    fs = series.fs
    counter = StreamingCounter(BandpassSpec(fs_hz=fs), params)
    margin = int(round(CONFIRM_MARGIN_S * fs))
    assert counter.lag <= params.distance_min + margin

    delays = []
    for value in series.as_float():
        for event in counter.push_samples([value]):
            delays.append(counter.samples_received - 1 - event.absolute_index)
    counter.finalize()

    assert delays
    assert set(delays) == {counter.lag}
