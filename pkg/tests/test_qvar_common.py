import json

import pytest

from qvar_common import (
    DEFAULT_GRID_DISTANCES,
    DEFAULT_GRID_PROMINENCES,
    ConfigError,
    QvarError,
    ZeroTruth,
    accuracy,
    dump_json_document,
    format_accuracy,
    load_config,
    mean_or_none,
)


def _write_config(tmp_path, document):
    path = tmp_path / "qvar_steps.json"
    path.write_text(document if isinstance(document, str) else json.dumps(document), encoding="utf-8")
    return str(path)


def test_defaults_from_empty_config():
    config = load_config()
    assert config.sample_rate_hz == 240
    assert (config.low_hz, config.high_hz, config.order) == (0.5, 2.5, 5)
    assert (config.prominence, config.distance) == (300.0, 100)
    assert config.grid_prominences == list(DEFAULT_GRID_PROMINENCES)
    assert config.grid_distances == list(DEFAULT_GRID_DISTANCES)
    assert config.workers == 1


def test_file_values(tmp_path):
    path = _write_config(
        tmp_path,
        {
            "filter": {"low_hz": 0.7, "order": 4},
            "peaks": {"prominence": 250},
            "grid": {"prominences": [100, 200], "distances": [60]},
            "workers": 3,
        },
    )
    config = load_config(path)
    assert (config.low_hz, config.high_hz, config.order) == (0.7, 2.5, 4)
    assert config.prominence == 250.0
    assert config.distance == 100
    assert config.grid_prominences == [100.0, 200.0]
    assert config.grid_distances == [60]
    assert config.workers == 3


def test_env_beats_file(tmp_path, monkeypatch):
    path = _write_config(tmp_path, {"peaks": {"prominence": 250, "distance": 80}})
    monkeypatch.setenv("QVAR_STEPS_PROMINENCE", "320")
    monkeypatch.setenv("QVAR_STEPS_DISTANCE", "120")
    config = load_config(path)
    assert (config.prominence, config.distance) == (320.0, 120)


def test_invalid_env_falls_back_with_warning(tmp_path, monkeypatch, capsys):
    path = _write_config(tmp_path, {"peaks": {"distance": 80}})
    monkeypatch.setenv("QVAR_STEPS_DISTANCE", "many")
    assert load_config(path).distance == 80
    assert "QVAR_STEPS_DISTANCE" in capsys.readouterr().err


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))


@pytest.mark.parametrize(
    "document",
    ["[1, 2]", '{"peaks": []}', '{"grid": {"distances": []}}', '{"filter": {"order": "five"}}', "{oops"],
)
def test_bad_config_documents(tmp_path, document):
    with pytest.raises(ConfigError):
        load_config(_write_config(tmp_path, document))


def test_error_codes_are_class_names():
    assert ZeroTruth("x").code == "ZeroTruth"
    assert isinstance(ConfigError("x"), QvarError)


def test_accuracy_is_exact():
    assert accuracy(1, 3) == pytest.approx(2 / 3)
    with pytest.raises(ZeroTruth):
        accuracy(1, -4)


def test_format_half_up():
    assert format_accuracy(0.005) == "0.01"
    assert format_accuracy(0.994) == "0.99"
    assert format_accuracy(None, missing="--") == "--"


def test_mean_or_none_skips_missing():
    assert mean_or_none([1.0, None, 0.5]) == pytest.approx(0.75)
    assert mean_or_none([None, None]) is None


def test_json_documents_end_with_newline():
    text = dump_json_document({"b": 1, "a": [1, 2]})
    assert text.endswith("\n")
    assert json.loads(text) == {"b": 1, "a": [1, 2]}
