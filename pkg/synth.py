#!/usr/bin/env python3

"""Seeded synthetic Qvar gait signals with exact step ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from qvar_common import DEFAULT_SAMPLE_RATE_HZ, InvalidScenario, _debug
from signal_core import (
    COUNT_LIMIT,
    Environment,
    SampleSeries,
    SessionManifest,
    Subsession,
)

MEAN_STEP_FREQ_HZ = 1.98
STEP_FREQ_SD_HZ = 0.13
CADENCE_LIMITS_HZ = (0.5, 2.5)
SUBJECT_CADENCE_CLAMP_HZ = (1.7, 2.1)
SUBSESSION_DURATION_S = (110.0, 120.0)
PULSE_WIDTH_S = 0.15
HUM_FREQ_HZ = 50.0
# Pulses are rendered out to this many Gaussian widths either side of the step.
PULSE_SUPPORT_SIGMAS = 5.0

DEFAULT_AMPLITUDE: Dict[Environment, float] = {
    Environment.PARKING_LOT: 400.0,
    Environment.SHOPPING_CENTER: 1500.0,
}
WEAK_AMPLITUDE = 120.0

DATASET_CONDITIONS: Tuple[Tuple[Environment, bool], ...] = (
    (Environment.PARKING_LOT, False),
    (Environment.PARKING_LOT, True),
    (Environment.SHOPPING_CENTER, True),
    (Environment.SHOPPING_CENTER, False),
)


class Preset(str, Enum):
    CLEAN = "clean"
    NOISY = "noisy"
    WEAK = "weak"


class DriftKind(str, Enum):
    NONE = "none"
    SINUSOID = "sinusoid"
    RANDOM_WALK = "random_walk"


@dataclass(frozen=True)
class Drift:
    kind: DriftKind = DriftKind.NONE
    freq_hz: float = 0.0
    amplitude_counts: float = 0.0
    sd_per_sample: float = 0.0

    @classmethod
    def sinusoid(cls, freq_hz: float, amplitude_counts: float) -> "Drift":
        return cls(kind=DriftKind.SINUSOID, freq_hz=freq_hz, amplitude_counts=amplitude_counts)

    @classmethod
    def random_walk(cls, sd_per_sample: float) -> "Drift":
        return cls(kind=DriftKind.RANDOM_WALK, sd_per_sample=sd_per_sample)

    def validate(self) -> None:
        if self.kind is DriftKind.SINUSOID:
            if not 0 < self.freq_hz <= 0.1:
                raise InvalidScenario(f"sinusoid drift frequency must lie in (0, 0.1] Hz, got {self.freq_hz}")
            if self.amplitude_counts < 0:
                raise InvalidScenario("drift amplitude must be >= 0")
        if self.kind is DriftKind.RANDOM_WALK and self.sd_per_sample < 0:
            raise InvalidScenario("random-walk drift sd must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        if self.kind is DriftKind.SINUSOID:
            return {"kind": self.kind.value, "freq_hz": self.freq_hz, "amplitude": self.amplitude_counts}
        if self.kind is DriftKind.RANDOM_WALK:
            return {"kind": self.kind.value, "sd_per_sample": self.sd_per_sample}
        return {"kind": self.kind.value}


@dataclass(frozen=True)
class Bout:
    walk_s: float
    rest_s: float = 0.0


@dataclass(frozen=True)
class GaitScenario:
    duration_s: float = 120.0
    step_freq_mean_hz: float = MEAN_STEP_FREQ_HZ
    step_freq_sd_hz: float = STEP_FREQ_SD_HZ
    env: Environment = Environment.PARKING_LOT
    step_amplitude_counts: Optional[float] = None
    noise_sd_counts: float = 0.0
    drift: Drift = field(default_factory=Drift)
    hum_50hz_amplitude: float = 0.0
    bouts: Tuple[Bout, ...] = ()
    seed: int = 0
    baseline_counts: float = 0.0
    pulse_width_s: float = PULSE_WIDTH_S
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ

    @classmethod
    def from_bouts(cls, bouts: Sequence[Bout], **overrides: Any) -> "GaitScenario":
        total = float(sum(bout.walk_s + bout.rest_s for bout in bouts))
        return cls(duration_s=total, bouts=tuple(bouts), **overrides)

    @property
    def amplitude(self) -> float:
        if self.step_amplitude_counts is None:
            return DEFAULT_AMPLITUDE[self.env]
        return float(self.step_amplitude_counts)

    def walk_segments(self) -> List[Tuple[float, float]]:
        if not self.bouts:
            return [(0.0, float(self.duration_s))]
        segments: List[Tuple[float, float]] = []
        cursor = 0.0
        for bout in self.bouts:
            segments.append((cursor, cursor + bout.walk_s))
            cursor += bout.walk_s + bout.rest_s
        return segments

    def validate(self) -> None:
        low, high = CADENCE_LIMITS_HZ
        if not self.duration_s > 0:
            raise InvalidScenario(f"duration must be positive, got {self.duration_s}")
        if not low < self.step_freq_mean_hz < high:
            raise InvalidScenario(
                f"mean step frequency must lie in ({low}, {high}) Hz, got {self.step_freq_mean_hz}"
            )
        if self.step_freq_sd_hz < 0:
            raise InvalidScenario("step frequency sd must be >= 0")
        if not self.amplitude > 0:
            raise InvalidScenario(f"step amplitude must be positive, got {self.amplitude}")
        if self.noise_sd_counts < 0 or self.hum_50hz_amplitude < 0:
            raise InvalidScenario("noise and hum amplitudes must be >= 0")
        if not self.pulse_width_s > 0:
            raise InvalidScenario("pulse width must be positive")
        if self.sample_rate_hz <= 2 * HUM_FREQ_HZ and self.hum_50hz_amplitude > 0:
            raise InvalidScenario("sample rate too low to carry mains hum")
        if not 0 <= self.seed < 2**64:
            raise InvalidScenario("seed must be a 64-bit unsigned integer")
        if abs(self.baseline_counts) >= COUNT_LIMIT:
            raise InvalidScenario("baseline outside the ADC range")
        self.drift.validate()
        if self.bouts:
            if any(bout.walk_s <= 0 or bout.rest_s < 0 for bout in self.bouts):
                raise InvalidScenario("bouts need walk_s > 0 and rest_s >= 0")
            total = sum(bout.walk_s + bout.rest_s for bout in self.bouts)
            if abs(total - self.duration_s) > 1e-6:
                raise InvalidScenario(
                    f"bouts cover {total:.6f} s but duration is {self.duration_s} s"
                )


@dataclass(frozen=True)
class GroundTruth:
    step_times_s: Tuple[float, ...]
    bout_bounds_s: Tuple[Tuple[float, float], ...]

    @property
    def step_count(self) -> int:
        return len(self.step_times_s)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step_count": self.step_count,
            "step_times_s": list(self.step_times_s),
            "bouts": [list(bounds) for bounds in self.bout_bounds_s],
        }


def _draw_cadence(rng: np.random.Generator, mean_hz: float, sd_hz: float) -> float:
    if sd_hz == 0:
        return mean_hz
    low, high = CADENCE_LIMITS_HZ
    while True:
        value = float(rng.normal(mean_hz, sd_hz))
        if low < value < high:
            return value


def _step_times(scenario: GaitScenario, rng: np.random.Generator) -> List[float]:
    times: List[float] = []
    for start, end in scenario.walk_segments():
        cadence = _draw_cadence(rng, scenario.step_freq_mean_hz, scenario.step_freq_sd_hz)
        t = start + 0.5 / cadence
        while t < end:
            times.append(t)
            cadence = _draw_cadence(rng, scenario.step_freq_mean_hz, scenario.step_freq_sd_hz)
            t += 1.0 / cadence
    return times


def _pulse_train(
    n_samples: int, fs: float, step_times: Sequence[float], amplitude: float, width_s: float
) -> np.ndarray:
    """Sum of Gaussian-derivative pulses; lobes are width_s apart, peak magnitude amplitude."""

    sigma = width_s / 2.0
    support = int(np.ceil(PULSE_SUPPORT_SIGMAS * sigma * fs))
    scale = amplitude * np.sqrt(np.e)
    out = np.zeros(n_samples)
    for step in step_times:
        centre = int(round(step * fs))
        lo = max(0, centre - support)
        hi = min(n_samples, centre + support + 1)
        if hi <= lo:
            continue
        u = np.arange(lo, hi) / fs - step
        out[lo:hi] += scale * (-u / sigma) * np.exp(-(u * u) / (2.0 * sigma * sigma))
    return out


def generate(scenario: GaitScenario) -> Tuple[SampleSeries, GroundTruth]:
    scenario.validate()
    fs = float(scenario.sample_rate_hz)
    n_samples = int(round(scenario.duration_s * fs))
    cadence_seq, noise_seq, drift_seq, hum_seq = np.random.SeedSequence(scenario.seed).spawn(4)
    cadence_rng = np.random.default_rng(cadence_seq)
    noise_rng = np.random.default_rng(noise_seq)
    drift_rng = np.random.default_rng(drift_seq)
    hum_rng = np.random.default_rng(hum_seq)

    step_times = _step_times(scenario, cadence_rng)
    t = np.arange(n_samples) / fs

    signal = np.full(n_samples, float(scenario.baseline_counts))
    signal += _pulse_train(n_samples, fs, step_times, scenario.amplitude, scenario.pulse_width_s)

    drift = scenario.drift
    if drift.kind is DriftKind.SINUSOID:
        phase = drift_rng.uniform(0.0, 2.0 * np.pi)
        signal += drift.amplitude_counts * np.sin(2.0 * np.pi * drift.freq_hz * t + phase)
    elif drift.kind is DriftKind.RANDOM_WALK:
        signal += np.cumsum(drift_rng.normal(0.0, drift.sd_per_sample, n_samples))

    if scenario.noise_sd_counts > 0:
        signal += noise_rng.normal(0.0, scenario.noise_sd_counts, n_samples)
    if scenario.hum_50hz_amplitude > 0:
        phase = hum_rng.uniform(0.0, 2.0 * np.pi)
        signal += scenario.hum_50hz_amplitude * np.sin(2.0 * np.pi * HUM_FREQ_HZ * t + phase)

    counts = np.clip(np.rint(signal), -COUNT_LIMIT, COUNT_LIMIT).astype(np.int64)
    truth = GroundTruth(
        step_times_s=tuple(step_times),
        bout_bounds_s=tuple(scenario.walk_segments()),
    )
    _debug(
        f"[synth] {scenario.env.value} {scenario.duration_s:.2f}s seed={scenario.seed}: "
        f"{truth.step_count} steps"
    )
    return SampleSeries(samples=counts, sample_rate_hz=scenario.sample_rate_hz), truth


def preset_scenario(
    preset: Preset = Preset.CLEAN,
    env: Environment = Environment.PARKING_LOT,
    **overrides: Any,
) -> GaitScenario:
    """Scenario for a named preset; keyword overrides win over preset values."""

    preset = Preset(preset)
    if preset is Preset.WEAK:
        reference = DEFAULT_AMPLITUDE[Environment.PARKING_LOT]
        values: Dict[str, Any] = dict(
            step_amplitude_counts=WEAK_AMPLITUDE,
            noise_sd_counts=0.05 * reference,
            drift=Drift.sinusoid(0.05, 2.0 * reference),
            hum_50hz_amplitude=0.1 * reference,
        )
    else:
        amplitude = overrides.get("step_amplitude_counts") or DEFAULT_AMPLITUDE[Environment(env)]
        if preset is Preset.NOISY:
            values = dict(
                noise_sd_counts=0.5 * amplitude,
                drift=Drift.random_walk(0.02 * amplitude),
            )
        else:
            values = dict(
                noise_sd_counts=0.05 * amplitude,
                drift=Drift.sinusoid(0.05, 2.0 * amplitude),
                hum_50hz_amplitude=0.1 * amplitude,
            )
    values.update(overrides)
    return GaitScenario(env=Environment(env), **values)


def intermittent_bouts(
    n_bouts: int,
    steps_per_bout: int = 5,
    rest_range_s: Tuple[float, float] = (1.0, 2.0),
    step_freq_hz: float = MEAN_STEP_FREQ_HZ,
    seed: int = 0,
) -> Tuple[Bout, ...]:
    """Short stepping bursts separated by rests drawn uniformly from rest_range_s."""

    low, high = rest_range_s
    if n_bouts < 1 or steps_per_bout < 1:
        raise InvalidScenario("need at least one bout of at least one step")
    if not 0 <= low <= high:
        raise InvalidScenario(f"invalid rest range {rest_range_s}")
    if not CADENCE_LIMITS_HZ[0] < step_freq_hz < CADENCE_LIMITS_HZ[1]:
        raise InvalidScenario(f"step frequency {step_freq_hz} Hz outside the walking band")
    rng = np.random.default_rng(seed)
    walk_s = steps_per_bout / step_freq_hz
    return tuple(
        Bout(walk_s=walk_s, rest_s=float(rng.uniform(low, high))) for _ in range(n_bouts)
    )


def _child_seed(sequence: np.random.SeedSequence) -> int:
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(
    n_subjects: int,
    template: Optional[Mapping[Tuple[Environment, bool], Mapping[str, Any]]] = None,
    seed: int = 0,
    preset: Preset = Preset.CLEAN,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ,
) -> List[Tuple[SessionManifest, SampleSeries, GroundTruth]]:
    """Per subject, four concatenated subsessions in table order with manifest and truth.

    The trolley flag only labels the subsession; it does not change the signal.
    """

    if n_subjects < 1:
        raise InvalidScenario(f"need at least one subject, got {n_subjects}")
    template = template or {}
    low_clamp, high_clamp = SUBJECT_CADENCE_CLAMP_HZ
    dataset: List[Tuple[SessionManifest, SampleSeries, GroundTruth]] = []

    for index, subject_seq in enumerate(np.random.SeedSequence(seed).spawn(n_subjects)):
        subject_id = f"S{index + 1:02d}"
        draw_seq, *condition_seqs = subject_seq.spawn(1 + len(DATASET_CONDITIONS))
        rng = np.random.default_rng(draw_seq)
        cadence = float(np.clip(rng.normal(MEAN_STEP_FREQ_HZ, STEP_FREQ_SD_HZ), low_clamp, high_clamp))

        pieces: List[np.ndarray] = []
        step_times: List[float] = []
        bounds: List[Tuple[float, float]] = []
        subsessions: List[Subsession] = []
        cursor = 0
        for (env, trolley), condition_seq in zip(DATASET_CONDITIONS, condition_seqs):
            n_samples = int(round(rng.uniform(*SUBSESSION_DURATION_S) * sample_rate_hz))
            overrides = dict(template.get((env, trolley), {}))
            overrides.setdefault("step_freq_mean_hz", cadence)
            scenario = preset_scenario(
                preset,
                env,
                duration_s=n_samples / sample_rate_hz,
                seed=_child_seed(condition_seq),
                sample_rate_hz=sample_rate_hz,
                **overrides,
            )
            series, truth = generate(scenario)
            offset_s = cursor / sample_rate_hz
            pieces.append(series.samples)
            step_times.extend(offset_s + t for t in truth.step_times_s)
            bounds.extend((offset_s + a, offset_s + b) for a, b in truth.bout_bounds_s)
            subsessions.append(
                Subsession(
                    env=env,
                    trolley=trolley,
                    start_index=cursor,
                    end_index=cursor + len(series),
                    truth_steps=truth.step_count,
                )
            )
            cursor += len(series)

        manifest = SessionManifest(subject_id=subject_id, subsessions=tuple(subsessions))
        manifest.validate(cursor)
        dataset.append(
            (
                manifest,
                SampleSeries(samples=np.concatenate(pieces), sample_rate_hz=sample_rate_hz),
                GroundTruth(step_times_s=tuple(step_times), bout_bounds_s=tuple(bounds)),
            )
        )
    return dataset

