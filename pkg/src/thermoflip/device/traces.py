"""CSV persistence for temperature series and controller action traces."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from ..thermal import DEFAULT_DT, TimeSeries

SERIES_HEADER = ["t_s", "temp_warm_C", "temp_cold_C", "voltage_V", "contact"]
ACTION_HEADER = ["t_s", "element", "action", "arg"]
_SPACING_TOL = 2e-6  # 6-decimal rounding on both neighbours


class TraceFormatError(ValueError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


@dataclass(frozen=True)
class ActionRecord:
    t_s: float
    element: int
    action: str
    arg: str = ""


def _open_write(target):
    if isinstance(target, (str, Path)):
        return open(target, "w", newline="", encoding="utf-8"), True
    return target, False


def _open_read(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", newline="", encoding="utf-8"), True
    return source, False


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_series(series: TimeSeries, target: str | Path | IO[str]) -> None:
    fh, owned = _open_write(target)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for t, tw, tc, v, c in zip(series.t, series.temp_warm, series.temp_cold,
                                   series.voltage, series.contact):
            w.writerow([_fmt(t), _fmt(tw), _fmt(tc), _fmt(v), "1" if c else "0"])
    finally:
        if owned:
            fh.close()


def series_to_csv(series: TimeSeries) -> str:
    buf = io.StringIO()
    write_series(series, buf)
    return buf.getvalue()


def _check_header(reader, expected: list[str]) -> None:
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError(1, "missing header") from None
    if header != expected:
        raise TraceFormatError(1, f"expected header {','.join(expected)!r}, got {','.join(header)!r}")


def read_series(source: str | Path | IO[str], dt: float | None = None) -> TimeSeries:
    """Read a series written by :func:`write_series`.

    The step is inferred from the time column unless given; times are
    rebuilt on the exact grid so the uniform-spacing invariant holds.
    """
    fh, owned = _open_read(source)
    try:
        reader = csv.reader(fh)
        _check_header(reader, SERIES_HEADER)
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(SERIES_HEADER):
                raise TraceFormatError(rowno, f"expected {len(SERIES_HEADER)} fields, got {len(row)}")
            try:
                vals = [float(x) for x in row[:4]]
            except ValueError as exc:
                raise TraceFormatError(rowno, str(exc)) from None
            if row[4] not in ("0", "1"):
                raise TraceFormatError(rowno, f"contact must be 0 or 1, got {row[4]!r}")
            rows.append(vals + [row[4] == "1"])
    finally:
        if owned:
            fh.close()

    if not rows:
        return TimeSeries.empty(dt or DEFAULT_DT)
    data = np.array([r[:4] for r in rows], dtype=np.float64)
    contact = np.array([r[4] for r in rows], dtype=bool)
    t_raw = data[:, 0]
    n = len(rows)
    if dt is None:
        dt = round((t_raw[-1] - t_raw[0]) / (n - 1), 9) if n > 1 else DEFAULT_DT
    t = t_raw[0] + np.arange(n) * dt
    if n > 1:
        off = np.abs(t - t_raw)
        bad = int(np.argmax(off))
        if off[bad] > _SPACING_TOL * max(1.0, abs(t_raw[bad])):
            raise TraceFormatError(bad + 2, f"time {t_raw[bad]} off the dt={dt} grid")
    return TimeSeries(dt, t, data[:, 1], data[:, 2], data[:, 3], contact)


def write_actions(records: Iterable[ActionRecord], target: str | Path | IO[str]) -> None:
    fh, owned = _open_write(target)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACTION_HEADER)
        for r in records:
            w.writerow([_fmt(r.t_s), str(r.element), r.action, r.arg])
    finally:
        if owned:
            fh.close()


def read_actions(source: str | Path | IO[str]) -> list[ActionRecord]:
    fh, owned = _open_read(source)
    try:
        reader = csv.reader(fh)
        _check_header(reader, ACTION_HEADER)
        out = []
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(ACTION_HEADER):
                raise TraceFormatError(rowno, f"expected {len(ACTION_HEADER)} fields, got {len(row)}")
            try:
                out.append(ActionRecord(float(row[0]), int(row[1]), row[2], row[3]))
            except ValueError as exc:
                raise TraceFormatError(rowno, str(exc)) from None
            if not row[2]:
                raise TraceFormatError(rowno, "empty action name")
        return out
    finally:
        if owned:
            fh.close()
