#!/usr/bin/env python3

"""Qvar signal container, unit conversion, CSV/frame ingestion and session slicing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
import struct
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from qvar_common import (
    DEFAULT_SAMPLE_RATE_HZ,
    VOLTS_PER_COUNT,
    BadMagic,
    ChecksumMismatch,
    CountOutOfRange,
    EmptyFrame,
    MalformedRow,
    ManifestError,
    NonMonotonicTime,
    RangeOutOfBounds,
    RateDeviation,
    TruncatedFrame,
    _debug,
    _warn,
    load_json_document,
    write_json_document,
)

COUNT_LIMIT = 65536
CSV_HEADER = ("t", "qvar")
RATE_TOLERANCE = 0.01

FRAME_MAGIC = b"\x51\x56"
FRAME_HEADER = struct.Struct("<2sIB")
MAX_FRAME_SAMPLES = 255


class Environment(str, Enum):
    PARKING_LOT = "ParkingLot"
    SHOPPING_CENTER = "ShoppingCenter"


def _frozen_counts(samples: Iterable[int]) -> np.ndarray:
    counts = np.asarray(samples, dtype=np.int64)
    if counts.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if counts.size:
        out_of_range = np.flatnonzero((counts > COUNT_LIMIT) | (counts < -COUNT_LIMIT))
        if out_of_range.size:
            first = int(out_of_range[0])
            raise CountOutOfRange(
                f"sample {first} = {int(counts[first])} outside ±{COUNT_LIMIT}"
            )
    counts = counts.astype(np.int32)
    counts.setflags(write=False)
    return counts


@dataclass(frozen=True, eq=False)
class SampleSeries:
    """Uniformly sampled Qvar signal in raw ADC counts."""

    samples: np.ndarray
    sample_rate_hz: Fraction = Fraction(DEFAULT_SAMPLE_RATE_HZ)
    t0_unix_ms: Optional[int] = None
    gap_indices: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        rate = Fraction(self.sample_rate_hz)
        if rate <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.t0_unix_ms is not None and self.t0_unix_ms < 0:
            raise ValueError("t0_unix_ms must be non-negative")
        object.__setattr__(self, "sample_rate_hz", rate)
        object.__setattr__(self, "samples", _frozen_counts(self.samples))
        object.__setattr__(self, "gap_indices", tuple(int(i) for i in self.gap_indices))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def fs(self) -> float:
        return float(self.sample_rate_hz)

    @property
    def duration_s(self) -> Fraction:
        return Fraction(len(self)) / self.sample_rate_hz

    @property
    def has_gaps(self) -> bool:
        return bool(self.gap_indices)

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64)

    def window(self, start: int, end: int) -> "SampleSeries":
        """Half-open slice [start, end) keeping rate, t0 and gaps consistent."""

        t0 = None
        if self.t0_unix_ms is not None:
            t0 = self.t0_unix_ms + round(Fraction(start * 1000) / self.sample_rate_hz)
        gaps = tuple(i - start for i in self.gap_indices if start < i < end)
        return SampleSeries(
            samples=self.samples[start:end],
            sample_rate_hz=self.sample_rate_hz,
            t0_unix_ms=t0,
            gap_indices=gaps,
        )


@dataclass(frozen=True)
class Subsession:
    env: Environment
    trolley: bool
    start_index: int
    end_index: int
    truth_steps: int
    reference_counts: Dict[str, Optional[int]] = field(default_factory=dict)

    @property
    def condition(self) -> Tuple[Environment, bool]:
        return self.env, self.trolley

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "env": self.env.value,
            "trolley": self.trolley,
            "start_index": self.start_index,
            "end_index": self.end_index,
            "truth_steps": self.truth_steps,
        }
        if self.reference_counts:
            payload["reference_counts"] = dict(self.reference_counts)
        return payload


@dataclass(frozen=True)
class SessionManifest:
    subject_id: str
    subsessions: Tuple[Subsession, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject_id": self.subject_id,
            "subsessions": [sub.to_dict() for sub in self.subsessions],
        }

    def validate(self, series_length: Optional[int] = None) -> None:
        previous_end = 0
        for position, sub in enumerate(self.subsessions):
            if sub.truth_steps < 0:
                raise ManifestError(
                    f"{self.subject_id} subsession {position}: truth_steps must be >= 0"
                )
            if sub.start_index < previous_end or sub.end_index <= sub.start_index:
                raise RangeOutOfBounds(
                    f"{self.subject_id} subsession {position}: range "
                    f"[{sub.start_index},{sub.end_index}) overlaps or is out of order"
                )
            if series_length is not None and sub.end_index > series_length:
                raise RangeOutOfBounds(
                    f"{self.subject_id} subsession {position}: end_index "
                    f"{sub.end_index} beyond series length {series_length}"
                )
            previous_end = sub.end_index


@dataclass
class Frame:
    seq: int
    samples: List[int]


@dataclass
class FrameStream:
    """Decoded notification frames plus transport diagnostics."""

    frames: List[Frame] = field(default_factory=list)
    gap_indices: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def counts_to_volts(series: SampleSeries) -> np.ndarray:
    return series.samples.astype(np.float64) * VOLTS_PER_COUNT


def _infer_rate(times: np.ndarray) -> Tuple[int, Tuple[int, ...]]:
    """Return (rate_hz, gap positions) or raise on irregular sampling."""

    intervals = np.diff(times)
    span = times[-1] - times[0]
    rate = int(round((times.size - 1) / span))
    period = 1.0 / rate if rate > 0 else 0.0
    if rate > 0 and np.all(np.abs(intervals - period) <= RATE_TOLERANCE * period):
        return rate, ()

    # Gapped recording: every interval is a whole number of median periods.
    median_period = float(np.median(intervals))
    rate = int(round(1.0 / median_period))
    if rate < 1:
        raise RateDeviation(f"median interval {median_period:.3f}s is below 1 Hz")
    period = 1.0 / rate
    multiples = np.rint(intervals / period)
    deviation = np.abs(intervals - multiples * period)
    bad = np.flatnonzero((multiples < 1) | (deviation > RATE_TOLERANCE * period))
    if bad.size:
        row = int(bad[0]) + 2
        raise RateDeviation(
            f"row {row + 1}: interval {intervals[bad[0]]:.6f}s deviates more than "
            f"{RATE_TOLERANCE:.0%} from {rate} Hz"
        )
    gap_positions = tuple(int(i) + 1 for i in np.flatnonzero(multiples >= 2))
    return rate, gap_positions


def load_csv(path: str) -> SampleSeries:
    """Parse a `t,qvar` CSV (seconds, raw counts) into a SampleSeries."""

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise MalformedRow(f"{path}: empty file") from exc
    except pd.errors.ParserError as exc:
        raise MalformedRow(f"{path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise MalformedRow(
            f"{path} byte offset {exc.start}: not valid UTF-8 ({exc.reason})"
        ) from exc

    columns = tuple(str(column).strip() for column in frame.columns)
    if columns != CSV_HEADER:
        raise MalformedRow(f"{path} row 1: expected header 't,qvar', got {','.join(columns)}")

    times = pd.to_numeric(frame["t"], errors="coerce")
    counts = pd.to_numeric(frame["qvar"], errors="coerce")
    invalid = times.isna() | counts.isna()
    if invalid.any():
        position = int(np.flatnonzero(invalid.to_numpy())[0])
        row = frame.iloc[position]
        raise MalformedRow(
            f"{path} row {position + 2}: non-numeric field '{row['t']},{row['qvar']}'"
        )
    non_finite = ~np.isfinite(times.to_numpy(dtype=np.float64)) | ~np.isfinite(
        counts.to_numpy(dtype=np.float64)
    )
    if non_finite.any():
        position = int(np.flatnonzero(non_finite)[0])
        row = frame.iloc[position]
        raise MalformedRow(
            f"{path} row {position + 2}: non-finite field '{row['t']},{row['qvar']}'"
        )
    fractional = counts != counts.round()
    if fractional.any():
        position = int(np.flatnonzero(fractional.to_numpy())[0])
        raise MalformedRow(f"{path} row {position + 2}: count is not an integer")
    out_of_range = counts.abs() > COUNT_LIMIT
    if out_of_range.any():
        position = int(np.flatnonzero(out_of_range.to_numpy())[0])
        raise CountOutOfRange(
            f"{path} row {position + 2}: count {frame.iloc[position]['qvar']} "
            f"outside ±{COUNT_LIMIT}"
        )

    time_values = times.to_numpy(dtype=np.float64)
    if time_values.size < 2:
        raise MalformedRow(f"{path}: need at least two rows to infer the sample rate")
    steps = np.diff(time_values)
    backwards = np.flatnonzero(steps <= 0)
    if backwards.size:
        row = int(backwards[0]) + 3
        raise NonMonotonicTime(f"{path} row {row}: timestamp does not increase")

    try:
        rate, gaps = _infer_rate(time_values)
    except RateDeviation as exc:
        raise RateDeviation(f"{path} {exc}") from exc
    if gaps:
        _debug(f"[signal_core] {path}: {len(gaps)} gap(s) in the recording at samples {list(gaps)[:5]}")
    _debug(f"[signal_core] {path}: {time_values.size} samples at {rate} Hz")
    return SampleSeries(
        samples=counts.to_numpy(dtype=np.int64),
        sample_rate_hz=Fraction(rate),
        gap_indices=gaps,
    )


def write_csv(series: SampleSeries, path: str) -> None:
    """Write the `t,qvar` format (gap positions become skipped timestamps)."""

    positions = np.arange(len(series), dtype=np.int64)
    for gap in series.gap_indices:
        positions[gap:] += 1
    frame = pd.DataFrame(
        {"t": positions / series.fs, "qvar": series.samples.astype(np.int64)}
    )
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def _checksum(data: bytes) -> int:
    value = 0
    for byte in data:
        value ^= byte
    return value


class FrameDecoder:
    """Incremental decoder for the Qvar notification frame format.

    Frame layout: magic 0x51 0x56, seq (uint32 LE), N (uint8, 1..255),
    N x int16 LE samples, XOR checksum over all preceding frame bytes.
    """

    def __init__(self, keep_frames: bool = True) -> None:
        self.keep_frames = keep_frames
        self._pending = b""
        self._offset = 0
        self._last_seq: Optional[int] = None
        self._sample_total = 0
        self.stream = FrameStream()

    def feed(self, data: bytes) -> List[Frame]:
        buffer = self._pending + bytes(data)
        decoded: List[Frame] = []
        position = 0
        while len(buffer) - position >= FRAME_HEADER.size:
            magic, seq, count = FRAME_HEADER.unpack_from(buffer, position)
            if magic != FRAME_MAGIC:
                raise BadMagic(
                    f"byte offset {self._offset + position}: expected 5156, got {magic.hex()}"
                )
            if count == 0:
                raise EmptyFrame(f"byte offset {self._offset + position}: frame holds no samples")
            frame_size = FRAME_HEADER.size + 2 * count + 1
            if len(buffer) - position < frame_size:
                break
            body = buffer[position : position + frame_size - 1]
            checksum = buffer[position + frame_size - 1]
            frame_offset = self._offset + position
            position += frame_size

            if _checksum(body) != checksum:
                message = f"{ChecksumMismatch.__name__}: frame seq {seq} at byte offset {frame_offset} dropped"
                self.stream.warnings.append(message)
                _warn(message)
                self._record_gap()
                continue
            if self._last_seq is not None and seq <= self._last_seq:
                message = f"frame seq {seq} after {self._last_seq} dropped (out of order)"
                self.stream.warnings.append(message)
                _warn(message)
                continue
            if self._last_seq is not None and seq != self._last_seq + 1:
                self._record_gap()
                _debug(
                    f"[signal_core] seq gap {self._last_seq}->{seq} "
                    f"at sample {self._sample_total}"
                )

            samples = list(struct.unpack_from(f"<{count}h", body, FRAME_HEADER.size))
            frame = Frame(seq=seq, samples=samples)
            if self.keep_frames:
                self.stream.frames.append(frame)
            decoded.append(frame)
            self._last_seq = seq
            self._sample_total += count

        self._pending = buffer[position:]
        self._offset += position
        return decoded

    def _record_gap(self) -> None:
        # One entry per position: a dropped frame and the seq jump after it coincide.
        gaps = self.stream.gap_indices
        if not gaps or gaps[-1] != self._sample_total:
            gaps.append(self._sample_total)

    def close(self) -> None:
        if self._pending:
            raise TruncatedFrame(
                f"byte offset {self._offset}: {len(self._pending)} trailing byte(s) "
                "do not form a complete frame"
            )


def decode_frames(data: bytes) -> Tuple[SampleSeries, FrameStream]:
    decoder = FrameDecoder()
    decoder.feed(data)
    decoder.close()
    stream = decoder.stream
    samples = [sample for frame in stream.frames for sample in frame.samples]
    series = SampleSeries(samples=samples, gap_indices=tuple(stream.gap_indices))
    return series, stream


def encode_frames(
    samples: Sequence[int], start_seq: int = 0, frame_len: int = 24
) -> bytes:
    if not 1 <= frame_len <= MAX_FRAME_SAMPLES:
        raise ValueError(f"frame_len must be within 1..{MAX_FRAME_SAMPLES}")
    chunks: List[bytes] = []
    values = [int(sample) for sample in samples]
    for position, value in enumerate(values):
        if not -32768 <= value <= 32767:
            raise CountOutOfRange(f"sample {position} = {value} does not fit an int16 frame")
    for index, offset in enumerate(range(0, len(values), frame_len)):
        block = values[offset : offset + frame_len]
        body = FRAME_HEADER.pack(FRAME_MAGIC, (start_seq + index) & 0xFFFFFFFF, len(block))
        body += struct.pack(f"<{len(block)}h", *block)
        chunks.append(body + bytes([_checksum(body)]))
    return b"".join(chunks)


def split_at_gaps(series: SampleSeries) -> List[Tuple[int, SampleSeries]]:
    """Split into gap-free pieces, each with its absolute start offset."""

    bounds = [0, *series.gap_indices, len(series)]
    pieces: List[Tuple[int, SampleSeries]] = []
    for start, end in zip(bounds, bounds[1:]):
        if end > start:
            pieces.append((start, replace(series.window(start, end), gap_indices=())))
    return pieces


def slice_sessions(
    series: SampleSeries, manifest: SessionManifest
) -> List[Tuple[Subsession, SampleSeries]]:
    manifest.validate(len(series))
    return [
        (sub, series.window(sub.start_index, sub.end_index))
        for sub in manifest.subsessions
    ]


def _parse_reference_counts(raw: Any, where: str) -> Dict[str, Optional[int]]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ManifestError(f"{where}: reference_counts must be an object")
    parsed: Dict[str, Optional[int]] = {}
    for device, value in raw.items():
        if value is None:
            parsed[str(device)] = None
        elif isinstance(value, int) and not isinstance(value, bool) and value >= 0:
            parsed[str(device)] = value
        else:
            raise ManifestError(f"{where}: reference count for {device} must be a non-negative integer")
    return parsed


def manifest_from_dict(document: Dict[str, Any]) -> SessionManifest:
    if not isinstance(document, dict) or "subject_id" not in document:
        raise ManifestError("manifest needs a 'subject_id'")
    subject_id = str(document["subject_id"])
    raw_subsessions = document.get("subsessions", [])
    if not isinstance(raw_subsessions, list):
        raise ManifestError(f"{subject_id}: 'subsessions' must be a list")

    subsessions: List[Subsession] = []
    for position, raw in enumerate(raw_subsessions):
        where = f"{subject_id} subsession {position}"
        try:
            env = Environment(raw["env"])
            subsessions.append(
                Subsession(
                    env=env,
                    trolley=bool(raw["trolley"]),
                    start_index=int(raw["start_index"]),
                    end_index=int(raw["end_index"]),
                    truth_steps=int(raw["truth_steps"]),
                    reference_counts=_parse_reference_counts(
                        raw.get("reference_counts"), where
                    ),
                )
            )
        except KeyError as exc:
            raise ManifestError(f"{where}: missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"{where}: {exc}") from exc

    manifest = SessionManifest(subject_id=subject_id, subsessions=tuple(subsessions))
    manifest.validate()
    return manifest


def load_manifest(path: str) -> SessionManifest:
    return manifest_from_dict(load_json_document(path))


def save_manifest(manifest: SessionManifest, path: str) -> None:
    write_json_document(manifest.to_dict(), path)
