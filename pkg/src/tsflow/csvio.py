"""CSV ingestion and export.

Layout: a ``time`` column of ISO-8601 UTC timestamps followed by one column
per array. Arrays with feature axes spread over ``name[i]`` / ``name[i,j]``
columns in C order. An empty cell is NaN. Floats are written with ``repr``,
which is the shortest string that reads back to the same double.
"""

from __future__ import annotations

import csv
import io
import math
import re
from pathlib import Path

import numpy as np

from .core import DataSet, TimeArray, format_timestamp, parse_timestamp
from .errors import MalformedTimestamp, MalformedValue, NonIncreasingTime, RaggedRow

TIME_COLUMN = "time"
_ITEM_RE = re.compile(r"^(.*)\[(\d+(?:,\d+)*)\]$")


def format_float(v: float, precision: int | None = None) -> str:
    if math.isnan(v):
        return ""
    if precision is not None:
        return format(v, f".{precision}g")
    return repr(float(v))


def _columns(arr: TimeArray) -> list[str]:
    if not arr.feature_shape:
        return [arr.name]
    return [f"{arr.name}[{','.join(map(str, ix))}]" for ix in np.ndindex(*arr.feature_shape)]


def dumps_csv(data: DataSet, precision: int | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [TIME_COLUMN]
    blocks = []
    for arr in data.values():
        header += _columns(arr)
        blocks.append(arr.values.reshape(data.n_rows, -1))
    writer.writerow(header)
    table = np.concatenate(blocks, axis=1) if blocks else np.empty((data.n_rows, 0))
    for t, row in zip(data.index, table):
        writer.writerow([format_timestamp(t)] + [format_float(v, precision) for v in row.tolist()])
    return buf.getvalue()


def write_csv(data: DataSet, path: str | Path, precision: int | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_csv(data, precision), encoding="utf-8")


def _group_header(header: list[str], where: str) -> list[tuple[str, tuple[int, ...], list[int]]]:
    """Group value columns into arrays: ``(name, feature_shape, column positions)``."""
    groups: dict[str, list[tuple[tuple[int, ...], int]]] = {}
    for pos, col in enumerate(header):
        m = _ITEM_RE.match(col)
        name, ix = (m.group(1), tuple(int(i) for i in m.group(2).split(","))) if m else (col, ())
        groups.setdefault(name, []).append((ix, pos))
    out = []
    for name, items in groups.items():
        if items[0][0] == ():
            if len(items) != 1:
                raise MalformedValue(f"column {name!r} appears more than once", location=where)
            out.append((name, (), [items[0][1]]))
            continue
        shape = tuple(max(ix[d] for ix, _ in items) + 1 for d in range(len(items[0][0])))
        expected = list(np.ndindex(*shape))
        if [ix for ix, _ in items] != expected:
            raise MalformedValue(f"columns of array {name!r} are incomplete or out of order", location=where)
        out.append((name, shape, [p for _, p in items]))
    return out


def loads_csv(text: str, where: str = "<csv>") -> DataSet:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedValue("empty file: header row missing", location=f"{where}:1") from None
    if not header or header[0].strip() != TIME_COLUMN:
        raise MalformedValue(f"first column must be {TIME_COLUMN!r}", location=f"{where}:1")
    names = [h.strip() for h in header[1:]]
    groups = _group_header(names, f"{where}:1")
    times: list[int] = []
    rows: list[list[float]] = []
    for record in reader:
        line = reader.line_num
        if not record:
            continue
        if len(record) != len(header):
            raise RaggedRow(f"expected {len(header)} cells, found {len(record)}", location=f"{where}:{line}")
        try:
            t = parse_timestamp(record[0])
        except (MalformedTimestamp, ValueError, TypeError):
            raise MalformedTimestamp(f"cannot parse timestamp {record[0]!r}", location=f"{where}:{line}") from None
        if times and t <= times[-1]:
            raise NonIncreasingTime(f"timestamp {record[0]!r} does not increase", location=f"{where}:{line}")
        try:
            rows.append([float(c) if c.strip() else math.nan for c in record[1:]])
        except ValueError:
            raise MalformedValue("non-numeric cell", location=f"{where}:{line}") from None
        times.append(t)
    index = np.asarray(times, dtype=np.int64)
    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    arrays = [TimeArray(name, index, table[:, cols].reshape((len(rows),) + shape)) for name, shape, cols in groups]
    return DataSet(arrays, index)


def read_csv(path: str | Path) -> DataSet:
    path = Path(path)
    return loads_csv(path.read_text(encoding="utf-8"), str(path))
