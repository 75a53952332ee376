#!/usr/bin/env python3

"""qvar-steps: count steps from Qvar electrostatic recordings.

Commands: synth, count, stream, psd, tune, eval, plot. Reports go to stdout;
diagnostics go to stderr and every failure starts with a `Code: message` line.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
import os
import sys
from typing import Any, BinaryIO, Dict, List, Optional, Sequence, TextIO, Tuple

from counter import StreamingCounter, count_steps_batch, filtered_signal
from dsp_filter import BandpassSpec, FilterMode
from peak_detect import PeakParams
from qvar_common import (
    InvalidGrid,
    InvalidParams,
    InvalidSpec,
    InvariantViolation,
    ManifestError,
    PipelineConfig,
    QvarError,
    _debug,
    dump_json_document,
    load_config,
    load_json_document,
    write_json_document,
)
from signal_core import (
    FrameDecoder,
    SampleSeries,
    SessionManifest,
    encode_frames,
    load_csv,
    load_manifest,
    manifest_from_dict,
    save_manifest,
    write_csv,
)
from spectral import DEFAULT_OVERLAP, DEFAULT_SEGMENT, band_power, cadence_from_psd, dominant_frequency, welch_psd
from svg_plot import plot_psd, plot_steps
from synth import Preset, generate_dataset
from tuner_eval import (
    EvalTable,
    ParamGrid,
    counts_table,
    evaluate_dataset,
    render_eval_table,
    tune_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4

DATASET_INDEX = "dataset.json"
STREAM_READ_SIZE = 4096


class UsageError(Exception):
    def __init__(self, message: str, code: str = "UsageError") -> None:
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


@dataclass
class RunConfig:
    command: str
    args: argparse.Namespace
    pipeline: PipelineConfig

    @property
    def mode(self) -> FilterMode:
        return FilterMode.CAUSAL if self.args.causal else FilterMode.ZERO_PHASE

    def spec(self, fs_hz: float) -> BandpassSpec:
        return BandpassSpec(
            low_hz=self.pipeline.low_hz,
            high_hz=self.pipeline.high_hz,
            order=self.pipeline.order,
            fs_hz=float(fs_hz),
        )

    def params(self) -> PeakParams:
        return PeakParams(
            prominence_min=self.pipeline.prominence, distance_min=self.pipeline.distance
        )

    def grid(self) -> ParamGrid:
        return ParamGrid(
            prominences=tuple(self.pipeline.grid_prominences),
            distances=tuple(self.pipeline.grid_distances),
        )


def _shared_flags() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--low", type=float, help="passband low edge in Hz")
    shared.add_argument("--high", type=float, help="passband high edge in Hz")
    shared.add_argument("--order", type=int, help="Butterworth prototype order")
    shared.add_argument("--prominence", type=float, help="minimum peak prominence (counts)")
    shared.add_argument("--distance", type=int, help="minimum peak distance (samples)")
    shared.add_argument("--causal", action="store_true", help="forward-only filtering")
    shared.add_argument("--allow-gaps", action="store_true", help="split at recording gaps")
    shared.add_argument("--seed", type=int, default=0, help="master seed for synth")
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = _Parser(prog="qvar_steps.py", description="Qvar electrostatic step counting")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    synth = commands.add_parser("synth", parents=[shared], help="write a synthetic dataset")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--subjects", type=int, default=10)
    synth.add_argument("--preset", choices=[preset.value for preset in Preset], default="clean")
    synth.add_argument("--frames", action="store_true", help="also write binary frame files")

    count = commands.add_parser("count", parents=[shared], help="count steps in a CSV")
    count.add_argument("input")
    count.add_argument("--truth", type=int, help="ground-truth step count")

    stream = commands.add_parser("stream", parents=[shared], help="count steps from frames on stdin")
    stream.add_argument("--rate", type=float, help="sample rate of the frame stream in Hz")

    psd = commands.add_parser("psd", parents=[shared], help="Welch PSD and dominant gait frequency")
    psd.add_argument("input")
    psd.add_argument("--segment", type=int, default=DEFAULT_SEGMENT)
    psd.add_argument("--overlap", type=float, default=DEFAULT_OVERLAP)
    psd.add_argument("--svg", help="write the PSD plot to this path")
    psd.add_argument("--json", dest="json_path", help="also write dominant frequency and cadence as JSON")

    tune = commands.add_parser("tune", parents=[shared], help="grid search and vote parameters")
    tune.add_argument("dataset")
    tune.add_argument("--loo-vote", action="store_true", help="leave-one-subject-out voting")
    tune.add_argument("--workers", type=int)

    evaluate = commands.add_parser("eval", parents=[shared], help="per-condition accuracy table")
    evaluate.add_argument("dataset", nargs="?")
    evaluate.add_argument("--counts", help="fixture of reference counts instead of a dataset")
    evaluate.add_argument("--json", dest="json_path", help="also write the table as JSON")
    evaluate.add_argument("--workers", type=int)

    plot = commands.add_parser("plot", parents=[shared], help="SVG of raw, filtered and steps")
    plot.add_argument("input")
    plot.add_argument("--out", required=True)
    return parser


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    pipeline = load_config()
    overrides = {
        "low_hz": args.low,
        "high_hz": args.high,
        "order": args.order,
        "prominence": args.prominence,
        "distance": args.distance,
        "workers": getattr(args, "workers", None),
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(pipeline, name, value)

    if args.command == "eval" and (args.dataset is None) == (args.counts is None):
        raise UsageError("eval needs exactly one of DATASET or --counts")
    if pipeline.workers < 1:
        raise UsageError("--workers must be at least 1")
    config = RunConfig(command=args.command, args=args, pipeline=pipeline)
    try:
        config.spec(pipeline.sample_rate_hz).validate()
        config.params()
        config.grid()
    except (InvalidSpec, InvalidParams, InvalidGrid) as exc:
        raise UsageError(str(exc), code=exc.code) from exc
    return config


def load_dataset(path: str) -> List[Tuple[SessionManifest, SampleSeries]]:
    index = load_json_document(path)
    entries = index.get("sessions") if isinstance(index, dict) else None
    if not isinstance(entries, list) or not entries:
        raise ManifestError(f"{path}: expected a non-empty 'sessions' list")
    base = os.path.dirname(os.path.abspath(path))
    sessions: List[Tuple[SessionManifest, SampleSeries]] = []
    for entry in entries:
        try:
            csv_path = os.path.join(base, entry["csv"])
            manifest_path = os.path.join(base, entry["manifest"])
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: session entry needs 'csv' and 'manifest'") from exc
        manifest = load_manifest(manifest_path)
        series = load_csv(csv_path)
        manifest.validate(len(series))
        sessions.append((manifest, series))
    sessions.sort(key=lambda session: session[0].subject_id)
    return sessions


def load_counts_fixture(path: str) -> EvalTable:
    document = load_json_document(path)
    if not isinstance(document, dict) or not isinstance(document.get("sessions"), list):
        raise ManifestError(f"{path}: expected an object with a 'sessions' list")
    manifests = [manifest_from_dict(raw) for raw in document["sessions"]]
    devices = document.get("devices")
    return counts_table(manifests, devices=devices)


def _cmd_synth(config: RunConfig, stdout: TextIO) -> None:
    args = config.args
    if args.subjects < 1:
        raise UsageError("--subjects must be at least 1")
    os.makedirs(args.out, exist_ok=True)
    dataset = generate_dataset(
        args.subjects,
        seed=args.seed,
        preset=Preset(args.preset),
        sample_rate_hz=config.pipeline.sample_rate_hz,
    )
    index: Dict[str, Any] = {"preset": args.preset, "seed": args.seed, "sessions": []}
    for manifest, series, truth in dataset:
        stem = manifest.subject_id
        entry = {
            "subject_id": stem,
            "csv": f"{stem}.csv",
            "manifest": f"{stem}.manifest.json",
            "truth": f"{stem}.truth.json",
        }
        write_csv(series, os.path.join(args.out, entry["csv"]))
        save_manifest(manifest, os.path.join(args.out, entry["manifest"]))
        write_json_document(truth.to_dict(), os.path.join(args.out, entry["truth"]))
        if args.frames:
            entry["frames"] = f"{stem}.qvf"
            with open(os.path.join(args.out, entry["frames"]), "wb") as handle:
                handle.write(encode_frames(series.samples))
        index["sessions"].append(entry)
        print(f"{stem}\t{len(series)} samples\t{truth.step_count} steps", file=stdout)
    write_json_document(index, os.path.join(args.out, DATASET_INDEX))


def _cmd_count(config: RunConfig, stdout: TextIO) -> None:
    series = load_csv(config.args.input)
    report = count_steps_batch(
        series,
        config.spec(series.fs),
        config.params(),
        truth=config.args.truth,
        mode=config.mode,
        allow_gaps=config.args.allow_gaps,
    )
    stdout.write(report.to_json())


def _cmd_stream(config: RunConfig, stdin: BinaryIO, stdout: TextIO) -> None:
    rate = config.args.rate or config.pipeline.sample_rate_hz
    counter = StreamingCounter(config.spec(rate), config.params())
    decoder = FrameDecoder(keep_frames=False)
    read = getattr(stdin, "read1", stdin.read)

    def emit(events: Sequence[Any]) -> None:
        for event in events:
            stdout.write(f"{event.absolute_index}\t{event.time_s(rate):.6f}\n")
        if events:
            stdout.flush()

    while True:
        data = read(STREAM_READ_SIZE)
        if not data:
            break
        for frame in decoder.feed(data):
            emit(counter.push_samples(frame.samples))
    decoder.close()
    emit(counter.finalize())
    _debug(f"[stream] {counter.samples_received} samples, {counter.finalized_count} steps")


def _cmd_psd(config: RunConfig, stdout: TextIO) -> None:
    args = config.args
    series = load_csv(args.input)
    psd = welch_psd(series.as_float(), series.fs, args.segment, args.overlap)
    band = (config.pipeline.low_hz, config.pipeline.high_hz)
    dominant = dominant_frequency(psd, band)
    payload = {
        "dominant_hz": dominant,
        "cadence_spm": cadence_from_psd(psd, band),
        "band_power": band_power(psd, *band),
        "resolution_hz": psd.resolution_hz,
        "seg_len": psd.seg_len,
        "overlap": psd.overlap,
    }
    if args.svg:
        plot_psd(psd, args.svg, dominant_hz=dominant)
    if args.json_path:
        write_json_document(payload, args.json_path)
    stdout.write("freq_hz\tpsd\n")
    for freq, power in zip(psd.freqs_hz, psd.psd):
        stdout.write(f"{freq:.6f}\t{power:.6e}\n")


def _cmd_tune(config: RunConfig, stdout: TextIO) -> None:
    sessions = load_dataset(config.args.dataset)
    result = tune_dataset(
        sessions,
        grid=config.grid(),
        spec=config.spec(sessions[0][1].fs),
        loo=config.args.loo_vote,
        mode=config.mode,
        allow_gaps=config.args.allow_gaps,
        workers=config.pipeline.workers,
    )
    stdout.write(dump_json_document(result.to_dict()))


def _cmd_eval(config: RunConfig, stdout: TextIO) -> None:
    args = config.args
    if args.counts:
        table = load_counts_fixture(args.counts)
    else:
        sessions = load_dataset(args.dataset)
        table = evaluate_dataset(
            sessions,
            config.params(),
            config.spec(sessions[0][1].fs),
            mode=config.mode,
            allow_gaps=args.allow_gaps,
            workers=config.pipeline.workers,
        )
    if args.json_path:
        write_json_document(table.to_dict(), args.json_path)
    render_eval_table(table, stream=stdout)


def _cmd_plot(config: RunConfig, stdout: TextIO) -> None:
    args = config.args
    series = load_csv(args.input)
    spec = config.spec(series.fs)
    report = count_steps_batch(
        series, spec, config.params(), mode=config.mode, allow_gaps=args.allow_gaps
    )
    filtered = filtered_signal(series, spec, config.mode)
    plot_steps(series, filtered, report.step_indices, args.out, title=os.path.basename(args.input))
    print(f"{report.count} steps -> {args.out}", file=stdout)


def run(
    argv: Optional[Sequence[str]] = None,
    stdin: Optional[BinaryIO] = None,
    stdout: Optional[TextIO] = None,
    stderr: Optional[TextIO] = None,
) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        config = resolve_run_config(args)
        if config.command == "stream":
            _cmd_stream(config, stdin if stdin is not None else sys.stdin.buffer, stdout)
        else:
            handlers = {
                "synth": _cmd_synth,
                "count": _cmd_count,
                "psd": _cmd_psd,
                "tune": _cmd_tune,
                "eval": _cmd_eval,
                "plot": _cmd_plot,
            }
            handlers[config.command](config, stdout)
    except UsageError as exc:
        stderr.write(f"{exc.code}: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    except QvarError as exc:
        stderr.write(f"{exc.code}: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        stderr.write(f"IOError: {exc.filename or ''}: {exc.strerror or exc}\n")
        return EXIT_DATA
    except InvariantViolation as exc:
        stderr.write(f"{exc.code}: {exc}\n")
        return EXIT_INVARIANT
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
