import io
import os

import numpy as np
import pytest

import counter
import tuner_eval
from counter import StepReport, count_steps_batch
from dsp_filter import FilterMode
from peak_detect import PeakParams
from qvar_common import EmptyInput, InvalidGrid, ZeroTruth, load_json_document
from signal_core import Environment, SampleSeries, SessionManifest, Subsession, manifest_from_dict
from synth import Preset, generate, generate_dataset, preset_scenario
from tuner_eval import (
    ParamGrid,
    accuracy,
    counts_table,
    evaluate_dataset,
    format_accuracy,
    grid_search_session,
    loo_vote,
    majority_vote,
    render_eval_table,
    tune_dataset,
)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURE = os.path.join(ROOT, "fixtures", "reference_counts.json")


@pytest.fixture(scope="module")
def published_table():
    document = load_json_document(FIXTURE)
    manifests = [manifest_from_dict(raw) for raw in document["sessions"]]
    return counts_table(manifests, devices=document["devices"])


def _fake_batch(winning_keys, calls=None):
    def fake(series, spec=None, params=None, truth=None, mode=FilterMode.ZERO_PHASE, allow_gaps=False):
        if calls is not None:
            calls.append(params.key)
        value = 1.0 if params.key in winning_keys else 0.5
        return StepReport(
            step_indices=tuple(range(truth if value == 1.0 else truth // 2)),
            params_used=params,
            filter_mode=mode,
            truth=truth,
            accuracy=value,
        )

    return fake


@pytest.mark.parametrize(
    "measured,truth,expected",
    [(160, 160, 1.0), (170, 160, 0.9375), (0, 160, 0.0), (400, 160, -0.5)],
)
def test_accuracy(measured, truth, expected):
    assert accuracy(measured, truth) == pytest.approx(expected)


def test_accuracy_needs_positive_truth():
    with pytest.raises(ZeroTruth):
        accuracy(10, 0)


@pytest.mark.parametrize(
    "value,text", [(0.9375, "0.94"), (0.125, "0.13"), (1.0, "1.00"), (0.0, "0.00"), (None, "xx")]
)
def test_format_accuracy(value, text):
    assert format_accuracy(value) == text


def test_default_grid_has_28_cells_in_prominence_major_order():
    grid = ParamGrid()
    cells = grid.cells()
    assert len(grid) == 28
    assert cells[0].key == (200.0, 50)
    assert cells[1].key == (200.0, 100)
    assert cells[4].key == (250.0, 50)
    assert cells[-1].key == (500.0, 200)


@pytest.mark.parametrize(
    "prominences,distances",
    [((), (50,)), ((200.0, 100.0), (50,)), ((200.0,), (0,)), ((-1.0,), (50,))],
)
def test_invalid_grid(prominences, distances):
    with pytest.raises(InvalidGrid):
        ParamGrid(prominences, distances)


def test_grid_search_evaluates_every_cell(monkeypatch):
    calls = []
    monkeypatch.setattr(counter, "count_steps_batch", _fake_batch({(350.0, 150)}, calls))
    series = SampleSeries(samples=np.zeros(2000, dtype=int))
    best, best_accuracy = grid_search_session(series, 160)
    assert len(calls) == 28
    assert best.key == (350.0, 150)
    assert best_accuracy == 1.0


def test_grid_search_tie_goes_to_smaller_prominence_then_distance(monkeypatch):
    monkeypatch.setattr(counter, "count_steps_batch", _fake_batch({(250.0, 50), (200.0, 100)}))
    series = SampleSeries(samples=np.zeros(2000, dtype=int))
    best, _ = grid_search_session(series, 160)
    assert best.key == (200.0, 100)


def test_grid_search_parallel_matches_serial(monkeypatch):
    monkeypatch.setattr(counter, "count_steps_batch", _fake_batch({(300.0, 100), (450.0, 50)}))
    series = SampleSeries(samples=np.zeros(2000, dtype=int))
    assert grid_search_session(series, 160, workers=4) == grid_search_session(series, 160)


def test_grid_search_zero_truth():
    with pytest.raises(ZeroTruth):
        grid_search_session(SampleSeries(samples=np.zeros(2000, dtype=int)), 0)


def test_grid_search_result_dominates_every_cell():
    series, truth = generate(
        preset_scenario(Preset.CLEAN, Environment.PARKING_LOT, duration_s=30.0, seed=4)
    )
    grid = ParamGrid(prominences=(200.0, 350.0, 500.0), distances=(50, 150))
    best, best_accuracy = grid_search_session(series, truth.step_count, grid=grid)
    for cell in grid.cells():
        report = count_steps_batch(series, params=cell, truth=truth.step_count)
        assert report.accuracy <= best_accuracy
    assert best in grid.cells()


def test_majority_vote():
    votes = [PeakParams(300, 100), PeakParams(300, 100), PeakParams(200, 50)]
    assert majority_vote(votes).key == (300.0, 100)


def test_majority_vote_tie_goes_to_smallest_pair():
    votes = [PeakParams(350, 50), PeakParams(250, 150), PeakParams(250, 100), PeakParams(350, 50), PeakParams(250, 100)]
    assert majority_vote(votes).key == (250.0, 100)


def test_majority_vote_of_nothing():
    with pytest.raises(EmptyInput):
        majority_vote([])


def test_loo_vote_excludes_own_sessions():
    bests = {
        "S01": [PeakParams(500, 200), PeakParams(500, 200)],
        "S02": [PeakParams(200, 50)],
        "S03": [PeakParams(200, 50), PeakParams(300, 100)],
    }
    voted = loo_vote(bests)
    assert voted["S01"].key == (200.0, 50)
    assert voted["S02"].key == (500.0, 200)
    assert voted["S03"].key == (500.0, 200)


def test_published_counts_reproduce_condition_means(published_table):
    means = published_table.per_condition_means()
    no_trolley = means["In parking lot without shopping trolley"]
    trolley = means["In parking lot with shopping trolley"]
    assert [format_accuracy(no_trolley[d]) for d in published_table.devices] == ["0.97", "0.89", "0.91", "0.92"]
    assert [format_accuracy(trolley[d]) for d in published_table.devices] == ["0.20", "0.88", "0.92", "0.94"]


def _published_cells():
    document = load_json_document(FIXTURE)
    for session in document["sessions"]:
        for sub in session["subsessions"]:
            for device in document["devices"]:
                yield (
                    session["subject_id"],
                    sub["trolley"],
                    sub["truth_steps"],
                    sub["reference_counts"][device],
                    sub["reference_accuracy_2dp"][device],
                )


def test_every_published_cell_matches_its_printed_accuracy():
    cells = list(_published_cells())
    assert len(cells) == 80
    for subject, trolley, truth, count, printed in cells:
        if count is None:
            assert printed is None
            continue
        assert format_accuracy(accuracy(count, truth)) == printed, (subject, trolley, count)


def test_table_rows_match_printed_accuracies(published_table):
    document = load_json_document(FIXTURE)
    printed = {
        (session["subject_id"], sub["trolley"]): sub["reference_accuracy_2dp"]
        for session in document["sessions"]
        for sub in session["subsessions"]
    }
    checked = 0
    for table in published_table.conditions:
        for row in table.rows:
            expected = printed[(row.subject_id, table.trolley)]
            shown = {
                device: None if value is None else format_accuracy(value)
                for device, value in row.accuracies.items()
            }
            assert shown == expected, (row.subject_id, table.label)
            checked += 1
    assert checked == 20


@pytest.mark.parametrize("truth", [1, 7, 160, 215])
def test_accuracy_is_symmetric_in_the_error(truth):
    for d in range(truth + 1):
        assert accuracy(truth + d, truth) == accuracy(truth - d, truth)


def test_majority_vote_ignores_order():
    rng = np.random.default_rng(13)
    cells = ParamGrid().cells()
    for _ in range(200):
        votes = [cells[int(i)] for i in rng.integers(0, 6, size=int(rng.integers(1, 15)))]
        expected = majority_vote(votes).key
        for _ in range(5):
            shuffled = [votes[int(i)] for i in rng.permutation(len(votes))]
            assert majority_vote(shuffled).key == expected


def test_missing_counts_are_skipped_in_means(published_table):
    table = published_table.condition(Environment.PARKING_LOT, False)
    ear = [row.accuracies["EarQvar"] for row in table.rows]
    assert ear.count(None) == 3
    assert table.means(["EarQvar"])["EarQvar"] == pytest.approx(
        np.mean([value for value in ear if value is not None])
    )


def test_rendered_table_average_rows(published_table):
    out = io.StringIO()
    render_eval_table(published_table, stream=out, color=False)
    lines = out.getvalue().splitlines()
    assert lines[0].split() == ["Subject", "Truth", "Xiaomi", "Fitbit", "WristQvar", "EarQvar"]
    averages = [line.split()[1:] for line in lines if line.startswith("Avg.")]
    assert averages == [["0.97", "0.89", "0.91", "0.92"], ["0.20", "0.88", "0.92", "0.94"]]
    assert any(line.strip() == "In parking lot without shopping trolley" for line in lines)
    first_subject = next(line for line in lines if line.startswith("1 "))
    assert first_subject.split() == ["1", "160", "169/0.94", "164/0.98", "160/1.00", "xx/xx"]
    assert "\033[" not in out.getvalue()


def test_table_document_keeps_missing_as_null(published_table):
    document = published_table.to_dict()
    first = document["conditions"][0]
    assert first["label"] == "In parking lot without shopping trolley"
    assert first["rows"][0]["counts"]["EarQvar"] is None
    assert first["mean_accuracy_2dp"]["Xiaomi"] == "0.97"


def _dataset(n_subjects, duration_s=20.0):
    sessions = []
    for index in range(n_subjects):
        pieces, subsessions, cursor = [], [], 0
        for offset, (env, trolley) in enumerate(tuner_eval.CONDITION_ORDER):
            series, truth = generate(
                preset_scenario(Preset.CLEAN, env, duration_s=duration_s, seed=10 * index + offset)
            )
            pieces.append(series.samples)
            subsessions.append(
                Subsession(env, trolley, cursor, cursor + len(series), truth.step_count, {"Fitbit": truth.step_count})
            )
            cursor += len(series)
        manifest = SessionManifest(subject_id=f"S{index + 1:02d}", subsessions=tuple(subsessions))
        sessions.append((manifest, SampleSeries(samples=np.concatenate(pieces))))
    return sessions


def test_perfect_counter_gives_perfect_means(monkeypatch):
    def exact(series, spec=None, params=None, truth=None, mode=FilterMode.ZERO_PHASE, allow_gaps=False):
        return StepReport(tuple(range(truth)), params, mode, truth, accuracy(truth, truth))

    monkeypatch.setattr(counter, "count_steps_batch", exact)
    table = evaluate_dataset(_dataset(2), PeakParams(300, 100))
    assert table.devices == ("Fitbit", "WristQvar")
    assert len(table.conditions) == 4
    for means in table.per_condition_means().values():
        assert means["WristQvar"] == 1.0


def test_evaluate_dataset_uses_real_counts():
    sessions = _dataset(1)
    table = evaluate_dataset(sessions, PeakParams(300, 100))
    row = table.condition(Environment.PARKING_LOT, False).rows[0]
    manifest, series = sessions[0]
    sub = manifest.subsessions[0]
    piece = SampleSeries(samples=series.samples[sub.start_index : sub.end_index])
    assert row.counts["WristQvar"] == count_steps_batch(piece, params=PeakParams(300, 100)).count


def test_tune_dataset_votes_and_reports(monkeypatch):
    monkeypatch.setattr(counter, "count_steps_batch", _fake_batch({(250.0, 100)}))
    result = tune_dataset(_dataset(2), workers=2, loo=True)
    assert len(result.per_session_best) == 8
    assert result.voted_params.key == (250.0, 100)
    assert set(result.loo_params) == {"S01", "S02"}
    document = result.to_dict()
    assert document["voted_params"] == {"prominence": 250.0, "distance": 100}
    assert set(document["per_condition_means"]) == {"voted", "per_session_best"}


def test_tune_dataset_without_sessions():
    with pytest.raises(EmptyInput):
        tune_dataset([])


@pytest.mark.parametrize("preset,floor", [(Preset.CLEAN, 0.95), (Preset.NOISY, 0.90)])
def test_voted_params_on_synthetic_subjects(preset, floor):
    sessions = [(manifest, series) for manifest, series, _ in generate_dataset(10, seed=77, preset=preset)]
    result = tune_dataset(sessions, workers=4)
    means = result.voted_table.per_condition_means()
    assert len(means) == 4
    for label, by_device in means.items():
        assert by_device["WristQvar"] >= floor, label
