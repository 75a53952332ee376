#!/usr/bin/env python3

"""Step counting: batch pipeline and the window-based streaming counter."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dsp_filter import (
    BandpassSpec,
    BiquadCascade,
    FilterMode,
    ZERO_PHASE_PAD_S,
    design_butterworth_bandpass,
    filter_forward,
    filter_zero_phase,
)
from peak_detect import PeakParams, detect_peaks, find_local_maxima
from qvar_common import (
    DEFAULT_DISTANCE,
    DEFAULT_PROMINENCE,
    CounterClosed,
    GapsPresent,
    InvalidSpec,
    SeriesTooShort,
    _debug,
    _warn,
    accuracy,
    dump_json_document,
    format_accuracy,
)
from signal_core import SampleSeries, split_at_gaps

# Extra confirmation delay on top of distance_min before a streaming peak is decided.
CONFIRM_MARGIN_S = 0.25
# Streaming contour window: max(4 * distance_min, this many seconds).
BUFFER_MIN_S = 2.0


def default_params() -> PeakParams:
    return PeakParams(prominence_min=DEFAULT_PROMINENCE, distance_min=DEFAULT_DISTANCE)


@dataclass(frozen=True)
class StepEvent:
    absolute_index: int
    prominence: float

    def time_s(self, fs_hz: float) -> float:
        return self.absolute_index / fs_hz


@dataclass(frozen=True)
class StepReport:
    step_indices: Tuple[int, ...]
    params_used: PeakParams
    filter_mode: FilterMode
    truth: Optional[int] = None
    accuracy: Optional[float] = None

    @property
    def count(self) -> int:
        return len(self.step_indices)

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "count": self.count,
            "step_indices": list(self.step_indices),
            "params": self.params_used.to_dict(),
            "filter_mode": self.filter_mode.value,
        }
        if self.truth is not None:
            payload["truth"] = self.truth
        if self.accuracy is not None:
            payload["accuracy"] = self.accuracy
            payload["accuracy_2dp"] = format_accuracy(self.accuracy)
        return payload

    def to_json(self) -> str:
        return dump_json_document(self.to_dict())


def _spec_for(series: SampleSeries, spec: Optional[BandpassSpec]) -> BandpassSpec:
    if spec is None:
        return BandpassSpec(fs_hz=series.fs)
    if abs(spec.fs_hz - series.fs) > 1e-9:
        raise InvalidSpec(
            f"filter designed for {spec.fs_hz} Hz but series is sampled at {series.fs} Hz"
        )
    return spec


def _filter_piece(cascade: BiquadCascade, x: np.ndarray, mode: FilterMode) -> np.ndarray:
    if mode is FilterMode.ZERO_PHASE:
        return filter_zero_phase(cascade, x)
    fresh = cascade.copy()
    fresh.reset()
    return filter_forward(fresh, x)


def filtered_signal(
    series: SampleSeries,
    spec: Optional[BandpassSpec] = None,
    mode: FilterMode = FilterMode.ZERO_PHASE,
) -> np.ndarray:
    cascade = design_butterworth_bandpass(_spec_for(series, spec))
    return _filter_piece(cascade, series.as_float(), mode)


def count_steps_batch(
    series: SampleSeries,
    spec: Optional[BandpassSpec] = None,
    params: Optional[PeakParams] = None,
    truth: Optional[int] = None,
    mode: FilterMode = FilterMode.ZERO_PHASE,
    allow_gaps: bool = False,
) -> StepReport:
    """Filter, detect peaks, and report; accuracy is filled in when truth is given."""

    params = params or default_params()
    cascade = design_butterworth_bandpass(_spec_for(series, spec))

    if series.has_gaps and not allow_gaps:
        raise GapsPresent(
            f"series has {len(series.gap_indices)} gap(s) (first at sample "
            f"{series.gap_indices[0]}); pass --allow-gaps to split at gaps"
        )

    pieces = split_at_gaps(series) if series.has_gaps else [(0, series)]
    minimum = int(round(ZERO_PHASE_PAD_S * cascade.fs_hz)) + 1 if mode is FilterMode.ZERO_PHASE else 3
    indices: List[int] = []
    for offset, piece in pieces:
        if len(piece) < minimum:
            if len(pieces) == 1:
                raise SeriesTooShort(
                    f"need at least {minimum} samples for {mode.value} filtering, got {len(piece)}"
                )
            _warn(f"segment at sample {offset} ({len(piece)} samples) too short, skipped")
            continue
        filtered = _filter_piece(cascade, piece.as_float(), mode)
        indices.extend(offset + peak.index for peak in detect_peaks(filtered, params))

    measured_accuracy = accuracy(len(indices), truth) if truth is not None else None
    _debug(f"[counter] batch {mode.value}: {len(indices)} steps, truth={truth}")
    return StepReport(
        step_indices=tuple(indices),
        params_used=params,
        filter_mode=mode,
        truth=truth,
        accuracy=measured_accuracy,
    )


class StreamingCounter:
    """Causal filter plus a bounded contour window; emits each step exactly once.

    A local maximum at absolute index p is decided once p + lag samples have
    arrived, using the buffer_len samples ending at p + lag. Decisions do not
    depend on how the input was chunked.
    """

    def __init__(
        self,
        spec: Optional[BandpassSpec] = None,
        params: Optional[PeakParams] = None,
        margin_s: float = CONFIRM_MARGIN_S,
    ) -> None:
        self.spec = spec or BandpassSpec()
        self.params = params or default_params()
        self.cascade = design_butterworth_bandpass(self.spec)
        fs = self.spec.fs_hz
        distance = self.params.distance_min
        self.buffer_len = max(4 * distance, int(round(BUFFER_MIN_S * fs)))
        self.lag = min(distance + int(round(margin_s * fs)), self.buffer_len - 1)
        self.finalized_count = 0
        self.next_emit_floor = 0
        self._ring = np.zeros(0)
        self._ring_start = 0
        self._received = 0
        self._last_emitted: Optional[int] = None
        self._closed = False

    @property
    def samples_received(self) -> int:
        return self._received

    def push_samples(self, chunk: Iterable[float]) -> List[StepEvent]:
        if self._closed:
            raise CounterClosed("counter was finalized")
        values = np.asarray(list(chunk) if not isinstance(chunk, np.ndarray) else chunk, dtype=np.float64)
        if values.size == 0:
            return []

        filtered = filter_forward(self.cascade, values)
        self._ring = np.concatenate([self._ring, filtered])
        self._received += values.size

        events = self._decide(self._received - self.lag, final=False)
        self.next_emit_floor = max(self.next_emit_floor, self._received - self.lag)

        keep_from = max(0, self._received - self.buffer_len)
        if keep_from > self._ring_start:
            self._ring = self._ring[keep_from - self._ring_start :]
            self._ring_start = keep_from
        return events

    def finalize(self) -> List[StepEvent]:
        if self._closed:
            raise CounterClosed("counter was already finalized")
        events = self._decide(self._received, final=True)
        self._closed = True
        self._ring = np.zeros(0)
        return events

    def _window(self, start: int, end: int) -> np.ndarray:
        return self._ring[start - self._ring_start : end - self._ring_start]

    def _decide(self, limit: int, final: bool) -> List[StepEvent]:
        low = max(self.next_emit_floor, 1)
        if limit <= low or self._received - (low - 1) < 3:
            return []

        segment = self._window(low - 1, self._received)
        candidates = [
            int(m) + low - 1
            for m in find_local_maxima(segment)
            if low <= int(m) + low - 1 < limit
        ]

        events: List[StepEvent] = []
        for peak in candidates:
            end = self._received if final else peak + self.lag + 1
            start = max(0, end - self.buffer_len)
            window = self._window(start, end)
            if window.size < 3:
                continue
            accepted = [
                found
                for found in detect_peaks(window, self.params)
                if found.index == peak - start
            ]
            if not accepted:
                continue
            if (
                self._last_emitted is not None
                and peak - self._last_emitted < self.params.distance_min
            ):
                continue
            events.append(StepEvent(absolute_index=peak, prominence=accepted[0].prominence))
            self._last_emitted = peak

        self.finalized_count += len(events)
        if events:
            _debug(f"[counter] stream emitted {[event.absolute_index for event in events]}")
        return events


def push_samples(counter: StreamingCounter, chunk: Sequence[float]) -> List[StepEvent]:
    return counter.push_samples(chunk)


def finalize(counter: StreamingCounter) -> List[StepEvent]:
    return counter.finalize()


def count_streaming(
    series: SampleSeries,
    spec: Optional[BandpassSpec] = None,
    params: Optional[PeakParams] = None,
    chunk_len: int = 240,
) -> List[StepEvent]:
    """Feed a whole series through a StreamingCounter in fixed-size chunks."""

    counter = StreamingCounter(_spec_for(series, spec), params)
    events: List[StepEvent] = []
    values = series.as_float()
    for offset in range(0, values.size, max(1, chunk_len)):
        events.extend(counter.push_samples(values[offset : offset + chunk_len]))
    events.extend(counter.finalize())
    return events
