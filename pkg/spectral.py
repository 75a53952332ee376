#!/usr/bin/env python3

"""Welch PSD estimate and dominant gait frequency."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import signal as sp_signal

from qvar_common import DEFAULT_HIGH_HZ, DEFAULT_LOW_HZ, EmptyBand, InvalidSegment, SeriesTooShort

DEFAULT_SEGMENT = 1024
DEFAULT_OVERLAP = 0.5


@dataclass(frozen=True, eq=False)
class PsdEstimate:
    freqs_hz: np.ndarray
    psd: np.ndarray
    seg_len: int
    overlap: float

    @property
    def resolution_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0])


def welch_psd(
    x: Sequence[float],
    fs_hz: float,
    seg_len: int = DEFAULT_SEGMENT,
    overlap: float = DEFAULT_OVERLAP,
) -> PsdEstimate:
    """One-sided density PSD from Hann-windowed, mean-removed, overlapping segments."""

    values = np.asarray(x, dtype=np.float64)
    if seg_len < 2 or seg_len & (seg_len - 1):
        raise InvalidSegment(f"segment length must be a power of two, got {seg_len}")
    if not 0.0 <= overlap < 1.0:
        raise InvalidSegment(f"overlap must lie in [0, 1), got {overlap}")
    if values.size < seg_len:
        raise SeriesTooShort(f"need at least {seg_len} samples, got {values.size}")

    freqs, psd = sp_signal.welch(
        values,
        fs=fs_hz,
        window="hann",
        nperseg=seg_len,
        noverlap=int(overlap * seg_len),
        detrend="constant",
        scaling="density",
        return_onesided=True,
        average="mean",
    )
    return PsdEstimate(
        freqs_hz=freqs,
        psd=np.maximum(psd, 0.0),
        seg_len=seg_len,
        overlap=overlap,
    )


def dominant_frequency(
    psd: PsdEstimate, band_hz: Tuple[float, float] = (DEFAULT_LOW_HZ, DEFAULT_HIGH_HZ)
) -> float:
    low, high = band_hz
    in_band = np.flatnonzero((psd.freqs_hz >= low) & (psd.freqs_hz <= high))
    if in_band.size == 0:
        raise EmptyBand(f"no PSD bin within [{low}, {high}] Hz")
    # argmax returns the first maximum, i.e. the lower frequency on ties.
    return float(psd.freqs_hz[in_band[np.argmax(psd.psd[in_band])]])


def band_power(psd: PsdEstimate, low_hz: float, high_hz: float) -> float:
    in_band = (psd.freqs_hz >= low_hz) & (psd.freqs_hz <= high_hz)
    return float(np.sum(psd.psd[in_band]) * psd.resolution_hz)


def cadence_from_psd(psd: PsdEstimate, band_hz: Tuple[float, float] = (DEFAULT_LOW_HZ, DEFAULT_HIGH_HZ)) -> float:
    """Dominant step frequency expressed as steps per minute."""

    return 60.0 * dominant_frequency(psd, band_hz)
