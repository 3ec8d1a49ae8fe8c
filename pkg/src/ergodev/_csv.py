"""Deterministic CSV emission with a ``#key=value`` metadata header.

Every artifact starts with '#'-prefixed metadata lines (keys sorted),
then one header row, then data rows.  Floats are rendered with repr(),
the shortest decimal that round-trips, and files are written with '\n'
newlines regardless of platform.  Nothing time- or host-dependent may
enter the metadata: two runs with the same resolved parameters must
produce byte-identical files.
"""

from __future__ import annotations

import sys
from collections.abc import Iterable, Sequence

import numpy as np


def format_cell(value: object) -> str:
    """Render one cell or metadata value deterministically."""
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, np.floating):
        value = float(value)
    elif isinstance(value, np.integer):
        value = int(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(format_cell(v) for v in value)
    return str(value)


def render_csv(
    metadata: dict[str, object],
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
) -> str:
    lines = [f"#{key}={format_cell(metadata[key])}" for key in sorted(metadata)]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_cell(cell) for cell in row))
    return "\n".join(lines) + "\n"


def write_csv(
    path: str | None,
    metadata: dict[str, object],
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
) -> str:
    """Write to `path`, or to stdout when path is None or '-'."""
    text = render_csv(metadata, header, rows)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text
