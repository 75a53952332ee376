#!/usr/bin/env python3

"""Accuracy metric, per-session grid search, parameter voting and table aggregation."""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools
import sys
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    TextIO,
    Tuple,
    TypeVar,
)

import counter
from dsp_filter import BandpassSpec, FilterMode
from peak_detect import PeakParams
from qvar_common import (
    DEFAULT_GRID_DISTANCES,
    DEFAULT_GRID_PROMINENCES,
    EmptyInput,
    InvalidGrid,
    InvalidParams,
    InvariantViolation,
    ZeroTruth,
    _debug,
    accuracy,
    format_accuracy,
    mean_or_none,
)
from signal_core import Environment, SampleSeries, SessionManifest, slice_sessions
from summary_table_printer import ColumnSpec, compute_widths, render_header, render_rows

__all__ = [
    "accuracy",
    "format_accuracy",
    "ParamGrid",
    "grid_search_session",
    "majority_vote",
    "loo_vote",
    "counts_table",
    "evaluate_dataset",
    "tune_dataset",
    "render_eval_table",
]

DEFAULT_DEVICE = "WristQvar"

Condition = Tuple[Environment, bool]

CONDITION_ORDER: Tuple[Condition, ...] = (
    (Environment.PARKING_LOT, False),
    (Environment.PARKING_LOT, True),
    (Environment.SHOPPING_CENTER, True),
    (Environment.SHOPPING_CENTER, False),
)

CONDITION_LABELS: Dict[Condition, str] = {
    (Environment.PARKING_LOT, False): "In parking lot without shopping trolley",
    (Environment.PARKING_LOT, True): "In parking lot with shopping trolley",
    (Environment.SHOPPING_CENTER, True): "In shopping center with shopping trolley",
    (Environment.SHOPPING_CENTER, False): "In shopping center without shopping trolley",
}

T = TypeVar("T")
R = TypeVar("R")


def _ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    """Apply fn to items, in parallel when workers > 1; results keep input order."""

    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _strictly_ascending(values: Sequence[Any]) -> bool:
    return all(later > earlier for earlier, later in zip(values, values[1:]))


@dataclass(frozen=True)
class ParamGrid:
    prominences: Tuple[float, ...] = DEFAULT_GRID_PROMINENCES
    distances: Tuple[int, ...] = DEFAULT_GRID_DISTANCES

    def __post_init__(self) -> None:
        prominences = tuple(float(value) for value in self.prominences)
        distances = tuple(self.distances)
        for name, values in (("prominences", prominences), ("distances", distances)):
            if not values:
                raise InvalidGrid(f"{name} must not be empty")
            if not _strictly_ascending(values):
                raise InvalidGrid(f"{name} must be strictly ascending, got {list(values)}")
        try:
            for prominence, distance in itertools.product(prominences, distances):
                PeakParams(prominence_min=prominence, distance_min=distance)
        except InvalidParams as exc:
            raise InvalidGrid(str(exc)) from exc
        object.__setattr__(self, "prominences", prominences)
        object.__setattr__(self, "distances", tuple(int(value) for value in distances))

    def __len__(self) -> int:
        return len(self.prominences) * len(self.distances)

    def cells(self) -> List[PeakParams]:
        """Prominence-major order, so the first best cell is also the tie-break winner."""

        return [
            PeakParams(prominence_min=prominence, distance_min=distance)
            for prominence, distance in itertools.product(self.prominences, self.distances)
        ]


def _search(
    series: SampleSeries,
    truth: int,
    spec: Optional[BandpassSpec],
    grid: ParamGrid,
    mode: FilterMode,
    allow_gaps: bool,
    workers: int,
) -> Tuple[PeakParams, float, int]:
    if truth <= 0:
        raise ZeroTruth(f"truth must be positive, got {truth}")

    cells = grid.cells()

    def evaluate(cell: PeakParams) -> "counter.StepReport":
        return counter.count_steps_batch(
            series, spec, cell, truth=truth, mode=mode, allow_gaps=allow_gaps
        )

    reports = _ordered_map(evaluate, cells, workers)
    best_index = 0
    for index, report in enumerate(reports):
        if report.accuracy is None:
            raise InvariantViolation("grid cell evaluated without an accuracy")
        if report.accuracy > reports[best_index].accuracy:
            best_index = index
    best = reports[best_index]
    _debug(
        f"[tuner_eval] {len(cells)} cells, best {cells[best_index].key} "
        f"count={best.count} truth={truth}"
    )
    return cells[best_index], float(best.accuracy), best.count


def grid_search_session(
    series: SampleSeries,
    truth: int,
    spec: Optional[BandpassSpec] = None,
    grid: Optional[ParamGrid] = None,
    mode: FilterMode = FilterMode.ZERO_PHASE,
    allow_gaps: bool = False,
    workers: int = 1,
) -> Tuple[PeakParams, float]:
    """Best grid cell by accuracy; ties go to smaller prominence, then smaller distance."""

    best, best_accuracy, _ = _search(
        series, truth, spec, grid or ParamGrid(), mode, allow_gaps, workers
    )
    return best, best_accuracy


def majority_vote(per_session_best: Sequence[PeakParams]) -> PeakParams:
    if not per_session_best:
        raise EmptyInput("cannot vote over an empty list of parameter sets")
    tally = Counter(params.key for params in per_session_best)
    (prominence, distance), _ = min(tally.items(), key=lambda item: (-item[1], item[0]))
    return PeakParams(prominence_min=prominence, distance_min=distance)


def loo_vote(best_by_subject: Mapping[str, Sequence[PeakParams]]) -> Dict[str, PeakParams]:
    """Per subject, the vote over every other subject's session bests."""

    if not best_by_subject:
        raise EmptyInput("cannot vote over an empty set of subjects")
    voted: Dict[str, PeakParams] = {}
    for subject in best_by_subject:
        others = [
            params
            for other, bests in best_by_subject.items()
            if other != subject
            for params in bests
        ]
        voted[subject] = majority_vote(others or list(best_by_subject[subject]))
    return voted


@dataclass
class EvalRow:
    subject_id: str
    truth: int
    counts: Dict[str, Optional[int]]
    accuracies: Dict[str, Optional[float]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject_id": self.subject_id,
            "truth": self.truth,
            "counts": dict(self.counts),
            "accuracy": dict(self.accuracies),
        }


@dataclass
class ConditionTable:
    env: Environment
    trolley: bool
    rows: List[EvalRow] = field(default_factory=list)

    @property
    def label(self) -> str:
        return CONDITION_LABELS[(self.env, self.trolley)]

    def means(self, devices: Sequence[str]) -> Dict[str, Optional[float]]:
        return {
            device: mean_or_none([row.accuracies.get(device) for row in self.rows])
            for device in devices
        }


@dataclass
class EvalTable:
    devices: Tuple[str, ...]
    conditions: List[ConditionTable]

    def condition(self, env: Environment, trolley: bool) -> ConditionTable:
        for table in self.conditions:
            if (table.env, table.trolley) == (env, trolley):
                return table
        raise KeyError(CONDITION_LABELS[(env, trolley)])

    def per_condition_means(self) -> Dict[str, Dict[str, Optional[float]]]:
        return {table.label: table.means(self.devices) for table in self.conditions}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "devices": list(self.devices),
            "conditions": [
                {
                    "env": table.env.value,
                    "trolley": table.trolley,
                    "label": table.label,
                    "rows": [row.to_dict() for row in table.rows],
                    "mean_accuracy": table.means(self.devices),
                    "mean_accuracy_2dp": {
                        device: format_accuracy(value)
                        for device, value in table.means(self.devices).items()
                    },
                }
                for table in self.conditions
            ],
        }


def _make_row(subject_id: str, truth: int, counts: Dict[str, Optional[int]]) -> EvalRow:
    return EvalRow(
        subject_id=subject_id,
        truth=truth,
        counts=counts,
        accuracies={
            device: None if count is None else accuracy(count, truth)
            for device, count in counts.items()
        },
    )


def _assemble(
    devices: Sequence[str], rows: Sequence[Tuple[Condition, EvalRow]]
) -> EvalTable:
    buckets: Dict[Condition, List[EvalRow]] = {key: [] for key in CONDITION_ORDER}
    for condition, row in rows:
        buckets[condition].append(row)
    return EvalTable(
        devices=tuple(devices),
        conditions=[
            ConditionTable(env=env, trolley=trolley, rows=buckets[(env, trolley)])
            for env, trolley in CONDITION_ORDER
            if buckets[(env, trolley)]
        ],
    )


def _device_order(manifests: Sequence[SessionManifest], extra: Sequence[str] = ()) -> List[str]:
    devices: List[str] = []
    for manifest in manifests:
        for sub in manifest.subsessions:
            for device in sub.reference_counts:
                if device not in devices:
                    devices.append(device)
    for device in extra:
        if device not in devices:
            devices.append(device)
    return devices


def counts_table(
    manifests: Sequence[SessionManifest], devices: Optional[Sequence[str]] = None
) -> EvalTable:
    """EvalTable built from the reference counts stored in manifests (no signal needed)."""

    devices = list(devices) if devices is not None else _device_order(manifests)
    rows = [
        (
            sub.condition,
            _make_row(
                manifest.subject_id,
                sub.truth_steps,
                {device: sub.reference_counts.get(device) for device in devices},
            ),
        )
        for manifest in manifests
        for sub in manifest.subsessions
    ]
    return _assemble(devices, rows)


Session = Tuple[SessionManifest, SampleSeries]


def evaluate_dataset(
    sessions: Sequence[Session],
    params: PeakParams,
    spec: Optional[BandpassSpec] = None,
    device_name: str = DEFAULT_DEVICE,
    mode: FilterMode = FilterMode.ZERO_PHASE,
    allow_gaps: bool = False,
    workers: int = 1,
    params_by_subject: Optional[Mapping[str, PeakParams]] = None,
) -> EvalTable:
    """Count every subsession with fixed params; reference device counts ride along."""

    manifests = [manifest for manifest, _ in sessions]
    devices = _device_order(manifests, extra=[device_name])
    jobs = [
        (manifest, sub, piece)
        for manifest, series in sessions
        for sub, piece in slice_sessions(series, manifest)
    ]

    def evaluate(job: Tuple[SessionManifest, Any, SampleSeries]) -> Tuple[Condition, EvalRow]:
        manifest, sub, piece = job
        chosen = params
        if params_by_subject is not None:
            chosen = params_by_subject.get(manifest.subject_id, params)
        report = counter.count_steps_batch(
            piece, spec, chosen, truth=sub.truth_steps, mode=mode, allow_gaps=allow_gaps
        )
        counts = {device: sub.reference_counts.get(device) for device in devices}
        counts[device_name] = report.count
        return sub.condition, _make_row(manifest.subject_id, sub.truth_steps, counts)

    return _assemble(devices, _ordered_map(evaluate, jobs, workers))


@dataclass
class SessionBest:
    subject_id: str
    env: Environment
    trolley: bool
    truth: int
    params: PeakParams
    accuracy: float
    count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject_id": self.subject_id,
            "env": self.env.value,
            "trolley": self.trolley,
            "truth": self.truth,
            "params": self.params.to_dict(),
            "count": self.count,
            "accuracy": self.accuracy,
        }


@dataclass
class TuneResult:
    per_session_best: List[SessionBest]
    voted_params: PeakParams
    voted_table: EvalTable
    best_table: EvalTable
    loo_params: Optional[Dict[str, PeakParams]] = None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "per_session_best": [best.to_dict() for best in self.per_session_best],
            "voted_params": self.voted_params.to_dict(),
            "per_condition_means": {
                "voted": self.voted_table.per_condition_means(),
                "per_session_best": self.best_table.per_condition_means(),
            },
        }
        if self.loo_params is not None:
            payload["loo_params"] = {
                subject: params.to_dict() for subject, params in self.loo_params.items()
            }
        return payload


def tune_dataset(
    sessions: Sequence[Session],
    grid: Optional[ParamGrid] = None,
    spec: Optional[BandpassSpec] = None,
    device_name: str = DEFAULT_DEVICE,
    loo: bool = False,
    mode: FilterMode = FilterMode.ZERO_PHASE,
    allow_gaps: bool = False,
    workers: int = 1,
) -> TuneResult:
    """Grid-search each subsession, vote, and evaluate under both voted and per-session params."""

    grid = grid or ParamGrid()
    jobs = [
        (manifest, sub, piece)
        for manifest, series in sessions
        for sub, piece in slice_sessions(series, manifest)
    ]
    if not jobs:
        raise EmptyInput("dataset has no subsessions")

    def search(job: Tuple[SessionManifest, Any, SampleSeries]) -> SessionBest:
        manifest, sub, piece = job
        best, best_accuracy, best_count = _search(
            piece, sub.truth_steps, spec, grid, mode, allow_gaps, workers=1
        )
        return SessionBest(
            subject_id=manifest.subject_id,
            env=sub.env,
            trolley=sub.trolley,
            truth=sub.truth_steps,
            params=best,
            accuracy=best_accuracy,
            count=best_count,
        )

    bests = _ordered_map(search, jobs, workers)
    voted = majority_vote([best.params for best in bests])

    loo_params: Optional[Dict[str, PeakParams]] = None
    if loo:
        by_subject: Dict[str, List[PeakParams]] = {}
        for best in bests:
            by_subject.setdefault(best.subject_id, []).append(best.params)
        loo_params = loo_vote(by_subject)

    voted_table = evaluate_dataset(
        sessions,
        voted,
        spec,
        device_name=device_name,
        mode=mode,
        allow_gaps=allow_gaps,
        workers=workers,
        params_by_subject=loo_params,
    )

    manifests = [manifest for manifest, _ in sessions]
    devices = _device_order(manifests, extra=[device_name])
    best_rows = []
    for (manifest, sub, _), best in zip(jobs, bests):
        counts = {device: sub.reference_counts.get(device) for device in devices}
        counts[device_name] = best.count
        best_rows.append((sub.condition, _make_row(manifest.subject_id, sub.truth_steps, counts)))

    _debug(f"[tuner_eval] voted {voted.key} over {len(bests)} sessions")
    return TuneResult(
        per_session_best=bests,
        voted_params=voted,
        voted_table=voted_table,
        best_table=_assemble(devices, best_rows),
        loo_params=loo_params,
    )


def _cell(row: EvalRow, device: str) -> str:
    count = row.counts.get(device)
    if count is None:
        return "xx/xx"
    return f"{count}/{format_accuracy(row.accuracies.get(device))}"


def render_eval_table(
    table: EvalTable, stream: TextIO = sys.stdout, color: Optional[bool] = None
) -> None:
    """Aligned text table: one block per condition, closed by an Avg. row."""

    if color is None:
        color = stream.isatty()
    headers = ["Subject", "Truth", *table.devices]
    columns = [ColumnSpec(align="<"), ColumnSpec(align=">")] + [
        ColumnSpec(align=">") for _ in table.devices
    ]

    blocks: List[Tuple[str, List[List[str]]]] = []
    for condition in table.conditions:
        rows = [
            [row.subject_id, str(row.truth), *(_cell(row, device) for device in table.devices)]
            for row in condition.rows
        ]
        means = condition.means(table.devices)
        rows.append(["Avg.", "", *(format_accuracy(means[device]) for device in table.devices)])
        blocks.append((condition.label, rows))

    widths = compute_widths([row for _, rows in blocks for row in rows], headers, columns)
    render_header(headers, widths, columns, stream=stream, color=color)
    for label, rows in blocks:
        total = sum(widths) + len(widths) - 1
        print(f"{label:^{total}}".rstrip(), file=stream)
        render_rows(rows, widths, columns, stream=stream, color=color, bold_last=True)
