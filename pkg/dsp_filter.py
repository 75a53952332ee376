#!/usr/bin/env python3

"""Butterworth bandpass design and application as second-order sections."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from scipy import signal as sp_signal

from qvar_common import (
    DEFAULT_HIGH_HZ,
    DEFAULT_LOW_HZ,
    DEFAULT_ORDER,
    DEFAULT_SAMPLE_RATE_HZ,
    InvalidFrequency,
    InvalidSpec,
    SeriesTooShort,
    _debug,
    dump_json_document,
)
from signal_core import SampleSeries

# Odd-reflection padding for the forward-backward pass, in seconds.
ZERO_PHASE_PAD_S = 3.0

FloatOrArray = Union[float, np.ndarray]


class FilterMode(str, Enum):
    ZERO_PHASE = "ZeroPhase"
    CAUSAL = "Causal"


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = DEFAULT_LOW_HZ
    high_hz: float = DEFAULT_HIGH_HZ
    order: int = DEFAULT_ORDER
    fs_hz: float = float(DEFAULT_SAMPLE_RATE_HZ)

    def validate(self) -> None:
        if self.order < 1:
            raise InvalidSpec(f"order must be a positive integer, got {self.order}")
        if self.fs_hz <= 0:
            raise InvalidSpec(f"fs_hz must be positive, got {self.fs_hz}")
        if not 0 < self.low_hz < self.high_hz < self.fs_hz / 2:
            raise InvalidSpec(
                f"need 0 < low ({self.low_hz}) < high ({self.high_hz}) "
                f"< Nyquist ({self.fs_hz / 2})"
            )


@dataclass
class BiquadCascade:
    """SOS rows [b0, b1, b2, 1, a1, a2] with DF-II-transposed delay state."""

    sos: np.ndarray
    fs_hz: float
    state: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.sos = np.array(self.sos, dtype=np.float64).reshape(-1, 6)
        if not np.allclose(self.sos[:, 3], 1.0):
            raise InvalidSpec("section coefficients must be normalized to a0 = 1")
        if self.state is None:
            self.state = np.zeros((self.sos.shape[0], 2))

    @property
    def sections(self) -> List[Tuple[float, float, float, float, float]]:
        return [
            (row[0], row[1], row[2], row[4], row[5]) for row in self.sos.tolist()
        ]

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, row[4], row[5]]) for row in self.sos])

    def is_stable(self, margin: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0 - margin))

    def reset(self) -> None:
        self.state = np.zeros((self.sos.shape[0], 2))

    def copy(self) -> "BiquadCascade":
        return BiquadCascade(sos=self.sos.copy(), fs_hz=self.fs_hz, state=self.state.copy())


def design_butterworth_bandpass(spec: BandpassSpec) -> BiquadCascade:
    """Digital Butterworth bandpass with prewarped band edges.

    `order` is the lowpass prototype order, so the cascade has `order`
    sections (a 2*order bandpass). Sections come out ordered by ascending
    pole magnitude.
    """

    spec.validate()
    sos = sp_signal.butter(
        spec.order,
        [spec.low_hz, spec.high_hz],
        btype="bandpass",
        fs=spec.fs_hz,
        output="sos",
    )
    cascade = BiquadCascade(sos=sos, fs_hz=spec.fs_hz)
    _debug(
        f"[dsp_filter] {cascade.sos.shape[0]} sections, "
        f"max |pole| {np.max(np.abs(cascade.poles())):.9f}"
    )
    return cascade


def frequency_response(
    cascade: BiquadCascade, f_hz: FloatOrArray
) -> Tuple[FloatOrArray, FloatOrArray]:
    """Magnitude and phase (radians) of the cascade at f_hz."""

    freqs = np.atleast_1d(np.asarray(f_hz, dtype=np.float64))
    if np.any(freqs < 0) or np.any(freqs > cascade.fs_hz / 2):
        raise InvalidFrequency(f"frequency must lie within [0, {cascade.fs_hz / 2}] Hz")
    _, response = sp_signal.sosfreqz(cascade.sos, worN=freqs, fs=cascade.fs_hz)
    magnitude = np.abs(response)
    phase = np.angle(response)
    if np.ndim(f_hz) == 0:
        return float(magnitude[0]), float(phase[0])
    return magnitude, phase


def _as_float(series: Union[SampleSeries, np.ndarray]) -> np.ndarray:
    if isinstance(series, SampleSeries):
        return series.as_float()
    return np.asarray(series, dtype=np.float64)


def filter_forward(
    cascade: BiquadCascade, series: Union[SampleSeries, np.ndarray]
) -> np.ndarray:
    """Causal pass; the cascade keeps its state so the next chunk continues."""

    x = _as_float(series)
    if x.size == 0:
        return np.zeros(0)
    y, cascade.state = sp_signal.sosfilt(cascade.sos, x, zi=cascade.state)
    return y


def filter_zero_phase(
    cascade: BiquadCascade, series: Union[SampleSeries, np.ndarray]
) -> np.ndarray:
    """Forward-backward pass (|H|^2, zero phase); cascade state is untouched."""

    x = _as_float(series)
    pad = int(round(ZERO_PHASE_PAD_S * cascade.fs_hz))
    if x.size <= pad:
        raise SeriesTooShort(
            f"zero-phase filtering needs more than {pad} samples, got {x.size}"
        )
    return sp_signal.sosfiltfilt(cascade.sos, x, padtype="odd", padlen=pad)


def export_cascade(cascade: BiquadCascade) -> str:
    payload: Dict[str, Any] = {
        "fs_hz": cascade.fs_hz,
        "sections": [list(section) for section in cascade.sections],
    }
    return dump_json_document(payload)


def import_cascade(document: Dict[str, Any]) -> BiquadCascade:
    try:
        rows = [
            [b0, b1, b2, 1.0, a1, a2]
            for b0, b1, b2, a1, a2 in document["sections"]
        ]
        return BiquadCascade(sos=np.array(rows, dtype=np.float64), fs_hz=float(document["fs_hz"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidSpec):
            raise
        raise InvalidSpec(f"invalid cascade document: {exc}") from exc
