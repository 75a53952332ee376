#!/usr/bin/env python3

"""Shared helpers for the qvar-steps modules: errors, config, stderr logging."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

try:
    import json5 as json
except ImportError:
    import json
import json as stdlib_json
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

ENV_PREFIX = "QVAR_STEPS_"
CONFIG_ENV_VAR = f"{ENV_PREFIX}CONFIG"
PROMINENCE_ENV_VAR = f"{ENV_PREFIX}PROMINENCE"
DISTANCE_ENV_VAR = f"{ENV_PREFIX}DISTANCE"
WORKERS_ENV_VAR = f"{ENV_PREFIX}WORKERS"
DEBUG_ENV_VAR = f"{ENV_PREFIX}DEBUG"

DEFAULT_CONFIG_FILENAME = ".qvar_steps_config.json"

DEFAULT_SAMPLE_RATE_HZ = 240
DEFAULT_LOW_HZ = 0.5
DEFAULT_HIGH_HZ = 2.5
DEFAULT_ORDER = 5
DEFAULT_PROMINENCE = 300.0
DEFAULT_DISTANCE = 100
DEFAULT_GRID_PROMINENCES = (200.0, 250.0, 300.0, 350.0, 400.0, 450.0, 500.0)
DEFAULT_GRID_DISTANCES = (50, 100, 150, 200)

# Qvar ADC: 1.8 V reference over 16 bits.
VOLTS_PER_COUNT = 1.8 / 65536


class QvarError(ValueError):
    """Data error with a stable machine-readable code (the class name)."""

    @property
    def code(self) -> str:
        return type(self).__name__


class MalformedRow(QvarError):
    pass


class NonMonotonicTime(QvarError):
    pass


class RateDeviation(QvarError):
    pass


class CountOutOfRange(QvarError):
    pass


class BadMagic(QvarError):
    pass


class EmptyFrame(QvarError):
    pass


class ChecksumMismatch(QvarError):
    pass


class TruncatedFrame(QvarError):
    pass


class RangeOutOfBounds(QvarError):
    pass


class ManifestError(QvarError):
    pass


class InvalidSpec(QvarError):
    pass


class InvalidFrequency(QvarError):
    pass


class SeriesTooShort(QvarError):
    pass


class NotAPeak(QvarError):
    pass


class InvalidParams(QvarError):
    pass


class InvalidSegment(QvarError):
    pass


class EmptyBand(QvarError):
    pass


class GapsPresent(QvarError):
    pass


class CounterClosed(QvarError):
    pass


class ZeroTruth(QvarError):
    pass


class EmptyInput(QvarError):
    pass


class InvalidGrid(QvarError):
    pass


class InvalidScenario(QvarError):
    pass


class ConfigError(QvarError):
    pass


class InvariantViolation(RuntimeError):
    code = "InvariantViolation"


@dataclass
class PipelineConfig:
    sample_rate_hz: int
    low_hz: float
    high_hz: float
    order: int
    prominence: float
    distance: int
    grid_prominences: List[float] = field(default_factory=list)
    grid_distances: List[int] = field(default_factory=list)
    workers: int = 1


def _debug_enabled() -> bool:
    value = os.getenv(DEBUG_ENV_VAR, "").strip().lower()
    return value in {"1", "true", "yes", "on"}


def _debug(message: str) -> None:
    if _debug_enabled():
        sys.stderr.write(message.rstrip() + "\n")


def _warn(message: str) -> None:
    sys.stderr.write(message.rstrip() + "\n")


def _parse_float_env(name: str, default: float, minimum: float = 0.0) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default

    try:
        value = float(raw)
    except ValueError:
        _warn(f"Invalid value for {name}. Using default {default}.")
        return default

    if value < minimum:
        _warn(f"Value for {name} below {minimum}. Using default {default}.")
        return default

    return value


def _parse_int_env(name: str, default: int, minimum: int = 1) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default

    try:
        value = int(raw)
    except ValueError:
        _warn(f"Invalid value for {name}. Using default {default}.")
        return default

    if value < minimum:
        _warn(f"Value for {name} below {minimum}. Using default {default}.")
        return default

    return value


def load_json_document(path: str) -> Any:
    """Read a JSON (or JSON5, when available) document from disk."""

    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def dump_json_document(payload: Any) -> str:
    """Serialize a report or manifest as strict JSON (stable key order)."""

    return stdlib_json.dumps(payload, indent=2) + "\n"


def write_json_document(payload: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dump_json_document(payload))


def resolve_config_path() -> Tuple[str, bool]:
    """Return the config file path and whether it was set explicitly."""

    configured = os.getenv(CONFIG_ENV_VAR)
    filename = configured.strip() if configured else DEFAULT_CONFIG_FILENAME
    if os.path.isabs(filename):
        return filename, bool(configured)
    return os.path.join(sys.path[0], filename), bool(configured)


def _section(document: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = document.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section '{key}' must be an object")
    return value


def _number_list(values: Any, key: str, cast: type) -> List[Any]:
    if not isinstance(values, list) or not values:
        raise ConfigError(f"config key '{key}' must be a non-empty list")
    try:
        return [cast(item) for item in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{key}' has a non-numeric entry") from exc


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """Resolve defaults, the optional config file and env overrides."""

    explicit = path is not None
    if path is None:
        path, explicit = resolve_config_path()

    document: Dict[str, Any] = {}
    if os.path.exists(path):
        loaded = load_json_document(path)
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must contain an object")
        document = loaded
        _debug(f"[config] loaded {path}")
    elif explicit:
        raise ConfigError(f"config file not found: {path}")

    filter_section = _section(document, "filter")
    peaks_section = _section(document, "peaks")
    grid_section = _section(document, "grid")

    try:
        config = PipelineConfig(
            sample_rate_hz=int(document.get("sample_rate_hz", DEFAULT_SAMPLE_RATE_HZ)),
            low_hz=float(filter_section.get("low_hz", DEFAULT_LOW_HZ)),
            high_hz=float(filter_section.get("high_hz", DEFAULT_HIGH_HZ)),
            order=int(filter_section.get("order", DEFAULT_ORDER)),
            prominence=float(peaks_section.get("prominence", DEFAULT_PROMINENCE)),
            distance=int(peaks_section.get("distance", DEFAULT_DISTANCE)),
            grid_prominences=_number_list(
                grid_section.get("prominences", list(DEFAULT_GRID_PROMINENCES)),
                "grid.prominences",
                float,
            ),
            grid_distances=_number_list(
                grid_section.get("distances", list(DEFAULT_GRID_DISTANCES)),
                "grid.distances",
                int,
            ),
            workers=int(document.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid value in {path}: {exc}") from exc

    config.prominence = _parse_float_env(PROMINENCE_ENV_VAR, config.prominence)
    config.distance = _parse_int_env(DISTANCE_ENV_VAR, config.distance)
    config.workers = _parse_int_env(WORKERS_ENV_VAR, config.workers)
    _debug(
        f"[config] band={config.low_hz}-{config.high_hz}Hz order={config.order} "
        f"prominence={config.prominence} distance={config.distance}"
    )
    return config


def accuracy(measured: int, truth: int) -> float:
    """Relative step-count accuracy: 1 - |measured - truth| / truth."""

    if truth <= 0:
        raise ZeroTruth(f"truth must be positive, got {truth}")
    if measured < 0:
        raise ValueError(f"measured count must be non-negative, got {measured}")
    return float(1 - Fraction(abs(measured - truth), truth))


def format_accuracy(value: Optional[float], missing: str = "xx") -> str:
    """Two decimals, rounding half up on the shortest decimal form of value."""

    if value is None:
        return missing
    quantized = Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{quantized:.2f}"


def mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    if not present:
        return None
    return sum(present) / len(present)
