"""Text serialization for panels and result tables.

Panels are CSV files with header ``unit_id,time,value``. Lines starting
with ``#`` are comments; files written by this package carry the run seed
and config fingerprint in leading comment lines so every artifact is
traceable to the configuration that produced it. Floats are written with
``repr`` so values round-trip exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import os
from collections import OrderedDict

import numpy as np

from .ar_core import ObservedSeries, SeriesPanel
from .errors import InvalidInputError

PANEL_HEADER = ("unit_id", "time", "value")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def read_panel(path: str, min_length: int = 1) -> SeriesPanel:
    """Read a panel file, grouping rows by unit in order of first appearance.

    Rows within a unit are sorted by time; duplicate times are rejected by
    series validation.
    """
    if not os.path.exists(path):
        raise InvalidInputError(f"panel file not found: {path}")
    rows: OrderedDict[str, list[tuple[int, float]]] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty panel file") from None
        if tuple(h.strip() for h in header) != PANEL_HEADER:
            raise InvalidInputError(f"{path}: expected header {','.join(PANEL_HEADER)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InvalidInputError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            unit, t_str, v_str = (f.strip() for f in row)
            try:
                t = int(t_str)
                v = float(v_str)
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
            rows.setdefault(unit, []).append((t, v))
    series = []
    for unit, obs in rows.items():
        obs.sort(key=lambda tv: tv[0])
        times = np.array([t for t, _ in obs], dtype=np.int64)
        values = np.array([v for _, v in obs], dtype=float)
        series.append(ObservedSeries(unit, times, values))
    if not series:
        raise InvalidInputError(f"{path}: no data rows")
    return SeriesPanel(tuple(series), min_length=min_length)


def write_panel(panel: SeriesPanel, path: str, comments: tuple[str, ...] = ()) -> None:
    """Write a panel file, one row per observation."""
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh)
        writer.writerow(PANEL_HEADER)
        for s in panel:
            for t, v in zip(s.times, s.values):
                writer.writerow([s.unit_id, int(t), _fmt(v)])


def write_table(path: str, header: tuple[str, ...], rows, comments: tuple[str, ...] = ()) -> None:
    """Write a generic CSV result table with leading comment lines."""
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def read_table(path: str) -> tuple[tuple[str, ...], list[list[str]]]:
    """Read a CSV table written by ``write_table``, skipping comments."""
    if not os.path.exists(path):
        raise InvalidInputError(f"table file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise InvalidInputError(f"{path}: empty table") from None
        return header, [row for row in reader if row]
