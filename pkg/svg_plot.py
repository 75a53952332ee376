#!/usr/bin/env python3

"""Deterministic SVG figures: raw + filtered trace with step stars, and the PSD line."""

from __future__ import annotations

import io
from typing import Optional, Sequence, TextIO, Union

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

from signal_core import SampleSeries  # noqa: E402
from spectral import PsdEstimate  # noqa: E402

# Fixed salt and no timestamp so identical inputs give byte-identical SVG.
SVG_RC = {
    "svg.hashsalt": "qvar-steps",
    "svg.fonttype": "none",
    "path.simplify": False,
}
SVG_METADATA = {"Date": None, "Creator": None}

Target = Union[str, TextIO]


def _save(figure: Figure, target: Target) -> None:
    with matplotlib.rc_context(SVG_RC):
        buffer = io.StringIO()
        figure.savefig(buffer, format="svg", metadata=SVG_METADATA)
    text = buffer.getvalue()
    if isinstance(target, str):
        with open(target, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        target.write(text)


def plot_steps(
    series: SampleSeries,
    filtered: np.ndarray,
    step_indices: Sequence[int],
    target: Target,
    title: Optional[str] = None,
) -> None:
    """Raw counts on top, filtered signal below with a star on each detected step."""

    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(10, 5))
        raw_axis, filtered_axis = figure.subplots(2, 1, sharex=True)
        t = np.arange(len(series)) / series.fs
        raw_axis.plot(t, series.samples, color="tab:gray", linewidth=0.6, label="raw")
        raw_axis.set_ylabel("Qvar (counts)")
        raw_axis.legend(loc="upper right")

        steps = np.asarray(step_indices, dtype=np.int64)
        filtered_axis.plot(t, filtered, color="tab:blue", linewidth=0.8, label="filtered")
        if steps.size:
            filtered_axis.plot(
                t[steps],
                filtered[steps],
                linestyle="none",
                marker="*",
                markersize=8,
                color="tab:red",
                label=f"steps ({steps.size})",
            )
        filtered_axis.set_xlabel("time (s)")
        filtered_axis.set_ylabel("filtered (counts)")
        filtered_axis.legend(loc="upper right")
        if title:
            figure.suptitle(title)
        figure.tight_layout()
    _save(figure, target)


def plot_psd(psd: PsdEstimate, target: Target, dominant_hz: Optional[float] = None) -> None:
    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(8, 4))
        axis = figure.subplots()
        axis.semilogy(psd.freqs_hz, np.maximum(psd.psd, np.finfo(float).tiny), color="tab:blue")
        if dominant_hz is not None:
            axis.axvline(dominant_hz, color="tab:red", linestyle="--", label=f"{dominant_hz:.3f} Hz")
            axis.legend(loc="upper right")
        axis.set_xlabel("frequency (Hz)")
        axis.set_ylabel("PSD (counts²/Hz)")
        axis.set_xlim(0, min(10.0, float(psd.freqs_hz[-1])))
        figure.tight_layout()
    _save(figure, target)
