from __future__ import annotations

from dataclasses import dataclass
import sys
from typing import List, Optional, Sequence, TextIO

ANSI_RESET = "\033[0m"
ANSI_UNDERLINE = "\033[4m"
ANSI_BOLD = "\033[1m"
ANSI_ROW_ALT = "\033[48;2;26;26;26m"


@dataclass(frozen=True)
class ColumnSpec:
    align: str = "<"
    min_width: Optional[int] = None


@dataclass(frozen=True)
class Style:
    prefix: str = ""
    suffix: str = ""


def compute_widths(
    rows: Sequence[Sequence[str]],
    headers: Sequence[str],
    columns: Sequence[ColumnSpec],
) -> List[int]:
    if len(headers) != len(columns):
        raise ValueError("Headers and columns must be the same length")

    widths = [len(header) for header in headers]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError("Every row needs one cell per column")
        for index, cell in enumerate(row):
            widths[index] = max(widths[index], len("" if cell is None else str(cell)))

    for index, column in enumerate(columns):
        if column.min_width is not None:
            widths[index] = max(widths[index], column.min_width)
    return widths


def _format_cells(
    cells: Sequence[str], widths: Sequence[int], columns: Sequence[ColumnSpec]
) -> List[str]:
    return [
        f"{'' if cell is None else str(cell):{column.align}{width}}"
        for cell, column, width in zip(cells, columns, widths)
    ]


def render_header(
    headers: Sequence[str],
    widths: Sequence[int],
    columns: Sequence[ColumnSpec],
    stream: TextIO = sys.stdout,
    color: bool = True,
) -> None:
    parts = _format_cells(headers, widths, columns)
    if color:
        print(" ".join(f"{ANSI_UNDERLINE}{part}{ANSI_RESET}" for part in parts), file=stream)
        return
    print(" ".join(parts).rstrip(), file=stream)
    print(" ".join("-" * width for width in widths), file=stream)


def render_rows(
    rows: Sequence[Sequence[str]],
    widths: Sequence[int],
    columns: Sequence[ColumnSpec],
    stream: TextIO = sys.stdout,
    color: bool = True,
    stripe: bool = True,
    bold_last: bool = False,
) -> None:
    """One line per row; stripes and bold only apply when color is on."""

    if len(widths) != len(columns):
        raise ValueError("Widths and columns must be the same length")

    for row_index, row in enumerate(rows):
        line = " ".join(_format_cells(row, widths, columns))
        if not color:
            print(line.rstrip(), file=stream)
            continue
        style = Style()
        if stripe and row_index % 2:
            style = Style(prefix=ANSI_ROW_ALT)
        if bold_last and row_index == len(rows) - 1:
            style = Style(prefix=style.prefix + ANSI_BOLD)
        reset = ANSI_RESET if style.prefix or style.suffix else ""
        print(f"{style.prefix}{line}{style.suffix}{reset}", file=stream)
