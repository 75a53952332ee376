#!/usr/bin/env python3

"""Step-peak detection: local maxima, greedy distance filter, topographic prominence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import signal as sp_signal

from qvar_common import InvalidParams, NotAPeak, SeriesTooShort


@dataclass(frozen=True)
class PeakParams:
    prominence_min: float
    distance_min: int

    def __post_init__(self) -> None:
        if self.prominence_min < 0:
            raise InvalidParams(f"prominence must be >= 0, got {self.prominence_min}")
        if int(self.distance_min) != self.distance_min or self.distance_min < 1:
            raise InvalidParams(f"distance must be an integer >= 1, got {self.distance_min}")
        object.__setattr__(self, "distance_min", int(self.distance_min))
        object.__setattr__(self, "prominence_min", float(self.prominence_min))

    @property
    def key(self) -> Tuple[float, int]:
        return self.prominence_min, self.distance_min

    def to_dict(self) -> dict:
        return {"prominence": self.prominence_min, "distance": self.distance_min}


@dataclass(frozen=True)
class Peak:
    index: int
    height: float
    prominence: float
    left_base: int
    right_base: int


def _require_length(x: np.ndarray) -> None:
    if x.ndim != 1 or x.size < 3:
        raise SeriesTooShort(f"peak detection needs at least 3 samples, got {x.size}")


def find_local_maxima(x: Sequence[float]) -> np.ndarray:
    """Indices of interior maxima; flat tops report their (lower) middle sample."""

    values = np.asarray(x, dtype=np.float64)
    _require_length(values)
    maxima, _ = sp_signal.find_peaks(values)
    return maxima


def compute_prominence(x: Sequence[float], peak: int) -> Tuple[float, int, int]:
    values = np.asarray(x, dtype=np.float64)
    _require_length(values)
    if peak not in set(find_local_maxima(values).tolist()):
        raise NotAPeak(f"index {peak} is not a local maximum")
    prominences, left_bases, right_bases = sp_signal.peak_prominences(values, [peak])
    return float(prominences[0]), int(left_bases[0]), int(right_bases[0])


def enforce_distance(
    indices: Sequence[int], heights: Sequence[float], distance_min: int
) -> np.ndarray:
    """Greedy by height (ties: smaller index first); drop peaks closer than distance_min."""

    positions = np.asarray(indices, dtype=np.int64)
    priority = np.asarray(heights, dtype=np.float64)
    if positions.size != priority.size:
        raise ValueError("indices and heights must have the same length")
    if positions.size and np.any(np.diff(positions) <= 0):
        raise ValueError("peak indices must be strictly increasing")
    if distance_min <= 1 or positions.size < 2:
        return positions.copy()

    keep = np.ones(positions.size, dtype=bool)
    for current in np.lexsort((positions, -priority)):
        if not keep[current]:
            continue
        k = current - 1
        while k >= 0 and positions[current] - positions[k] < distance_min:
            keep[k] = False
            k -= 1
        k = current + 1
        while k < positions.size and positions[k] - positions[current] < distance_min:
            keep[k] = False
            k += 1
    return positions[keep]


def detect_peaks(x: Sequence[float], params: PeakParams) -> List[Peak]:
    """Local maxima, then distance, then prominence (ascending by index)."""

    values = np.asarray(x, dtype=np.float64)
    maxima = find_local_maxima(values)
    survivors = enforce_distance(maxima, values[maxima], params.distance_min)
    if survivors.size == 0:
        return []
    prominences, left_bases, right_bases = sp_signal.peak_prominences(values, survivors)
    return [
        Peak(
            index=int(index),
            height=float(values[index]),
            prominence=float(prominence),
            left_base=int(left),
            right_base=int(right),
        )
        for index, prominence, left, right in zip(
            survivors, prominences, left_bases, right_bases
        )
        if prominence >= params.prominence_min
    ]
