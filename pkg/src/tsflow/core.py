"""Immutable labeled time-series containers.

Time is stored as int64 UTC epoch seconds. Values are float64 with NaN as the
only missing-value marker. Nothing in here mutates its inputs; every array
handed out is flagged read-only.
"""

from __future__ import annotations

import datetime as _dt
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyIntersection, MalformedTimestamp, NonIncreasingTime, OverlappingIndices, SchemaMismatch

COLLISION_SUFFIX = "__"

_EPOCH = _dt.datetime(1970, 1, 1, tzinfo=_dt.timezone.utc)


def _frozen(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


def to_seconds(t) -> int:
    """Convert an instant (int seconds, datetime, datetime64 or ISO string) to epoch seconds."""
    if isinstance(t, (int, np.integer)):
        return int(t)
    if isinstance(t, np.datetime64):
        return int(t.astype("datetime64[s]").astype(np.int64))
    if isinstance(t, str):
        return parse_timestamp(t)
    if isinstance(t, _dt.datetime):
        if t.tzinfo is None:
            t = t.replace(tzinfo=_dt.timezone.utc)
        delta = t - _EPOCH
        if delta.microseconds:
            raise MalformedTimestamp(f"sub-second timestamp {t.isoformat()}")
        return delta.days * 86400 + delta.seconds
    raise TypeError(f"cannot interpret {t!r} as an instant")


def parse_timestamp(text: str) -> int:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        t = _dt.datetime.fromisoformat(s)
    except ValueError:
        raise MalformedTimestamp(f"cannot parse timestamp {text!r}") from None
    if t.tzinfo is not None and t.utcoffset() != _dt.timedelta(0):
        t = t.astimezone(_dt.timezone.utc)
    return to_seconds(t)


def format_timestamp(seconds: int) -> str:
    t = _EPOCH + _dt.timedelta(seconds=int(seconds))
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def make_index(times: Iterable) -> np.ndarray:
    """Build a validated, read-only time index."""
    if isinstance(times, np.ndarray) and times.dtype == np.int64 and times.ndim == 1:
        idx = times
    elif isinstance(times, np.ndarray) and np.issubdtype(times.dtype, np.datetime64):
        idx = times.astype("datetime64[s]").astype(np.int64)
    else:
        idx = np.asarray([to_seconds(t) for t in times], dtype=np.int64).reshape(-1)
    if idx.size > 1 and not np.all(np.diff(idx) > 0):
        bad = int(np.argmax(np.diff(idx) <= 0)) + 1
        raise NonIncreasingTime(f"time index not strictly increasing at position {bad}")
    return _frozen(idx)


@dataclass(frozen=True, eq=False)
class TimeArray:
    """A named float64 array whose first axis follows ``index``."""

    name: str
    index: np.ndarray
    values: np.ndarray
    feature_labels: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        index = make_index(self.index)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1)
        if values.shape[0] != index.shape[0]:
            raise SchemaMismatch(
                f"array {self.name!r}: {values.shape[0]} rows for an index of length {index.shape[0]}"
            )
        if not values.flags.c_contiguous:
            values = np.ascontiguousarray(values)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "values", _frozen(values))
        if self.feature_labels is not None:
            labels = tuple(tuple(str(x) for x in axis) for axis in self.feature_labels)
            if tuple(len(a) for a in labels) != values.shape[1:]:
                raise SchemaMismatch(f"array {self.name!r}: feature labels do not match shape {values.shape}")
            object.__setattr__(self, "feature_labels", labels)

    def __len__(self) -> int:
        return self.index.shape[0]

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    def renamed(self, name: str) -> TimeArray:
        return TimeArray(name, self.index, self.values, self.feature_labels)

    def take(self, positions: np.ndarray) -> TimeArray:
        return TimeArray(self.name, self.index[positions], self.values[positions], self.feature_labels)

    def equals(self, other: TimeArray) -> bool:
        """Bitwise equality of every non-NaN value (so -0.0 != 0.0); all NaNs compare equal."""
        if not (
            self.name == other.name
            and np.array_equal(self.index, other.index)
            and self.values.shape == other.values.shape
        ):
            return False
        a, b = np.isnan(self.values), np.isnan(other.values)
        return np.array_equal(a, b) and self.values[~a].tobytes() == other.values[~b].tobytes()

    def __repr__(self) -> str:
        return f"TimeArray({self.name!r}, rows={len(self)}, features={self.feature_shape})"


@dataclass(frozen=True, eq=False)
class DataSet(Mapping):
    """Named TimeArrays on one shared time index.

    ``index`` is kept even when there are no arrays, so an empty DataSet still
    knows which timestamps it covers.
    """

    arrays: Mapping[str, TimeArray] = field(default_factory=dict)
    index: np.ndarray | None = None

    def __post_init__(self) -> None:
        arrays = self.arrays
        if not isinstance(arrays, Mapping):
            items = list(arrays)
            arrays = {}
            for a in items:
                if a.name in arrays:
                    raise SchemaMismatch(f"duplicate array name {a.name!r}")
                arrays[a.name] = a
        arrays = dict(arrays)
        index = self.index
        for name, arr in arrays.items():
            if arr.name != name:
                arrays[name] = arr = arr.renamed(name)
            if index is None:
                index = arr.index
            elif not np.array_equal(index, arr.index):
                raise SchemaMismatch(f"array {name!r} does not share the DataSet time index")
        index = make_index(index if index is not None else np.empty(0, dtype=np.int64))
        object.__setattr__(self, "arrays", arrays)
        object.__setattr__(self, "index", index)

    @classmethod
    def from_arrays(cls, index, columns: Mapping[str, Sequence | np.ndarray]) -> DataSet:
        idx = make_index(index)
        return cls({k: TimeArray(k, idx, v) for k, v in columns.items()}, idx)

    def __getitem__(self, name: str) -> TimeArray:
        try:
            return self.arrays[name]
        except KeyError:
            raise SchemaMismatch(f"no array named {name!r} (have {sorted(self.arrays)})") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def __contains__(self, name) -> bool:
        return name in self.arrays

    def __repr__(self) -> str:
        return f"DataSet(rows={self.n_rows}, arrays={list(self.arrays)})"

    @property
    def n_rows(self) -> int:
        return int(self.index.shape[0])

    def select(self, names: Iterable[str]) -> DataSet:
        return DataSet({n: self[n] for n in names}, self.index)

    def rename(self, mapping: Mapping[str, str]) -> DataSet:
        out = {}
        for name, arr in self.arrays.items():
            new = mapping.get(name, name)
            if new in out:
                raise SchemaMismatch(f"rename collision on {new!r}")
            out[new] = arr.renamed(new)
        return DataSet(out, self.index)

    def take(self, positions: np.ndarray) -> DataSet:
        return DataSet({n: a.take(positions) for n, a in self.arrays.items()}, self.index[positions])

    def equals(self, other: DataSet) -> bool:
        return (
            list(self.arrays) == list(other.arrays)
            and np.array_equal(self.index, other.index)
            and all(self.arrays[n].equals(other.arrays[n]) for n in self.arrays)
        )


def _unique_name(name: str, taken: set[str]) -> str:
    n = 2
    while f"{name}{COLLISION_SUFFIX}{n}" in taken:
        n += 1
    return f"{name}{COLLISION_SUFFIX}{n}"


def align(a: DataSet, b: DataSet) -> DataSet:
    """Union of arrays on the intersection of both time indices.

    Names from ``b`` that collide with names already present get ``__2``
    (then ``__3`` ...) appended.
    """
    if np.array_equal(a.index, b.index):
        common = a.index
        pa = pb = None
    else:
        common, pa, pb = np.intersect1d(a.index, b.index, assume_unique=True, return_indices=True)
        if common.size == 0:
            raise EmptyIntersection("time indices of the merged inputs are disjoint")
    out: dict[str, TimeArray] = {}
    for name, arr in a.arrays.items():
        out[name] = arr if pa is None else arr.take(pa)
    for name, arr in b.arrays.items():
        new = name if name not in out else _unique_name(name, set(out) | set(b.arrays))
        arr = arr if pb is None else arr.take(pb)
        out[new] = arr.renamed(new) if new != name else arr
    return DataSet(out, common)


def slice_time(d: DataSet, start, end) -> DataSet:
    """Restrict every array to timestamps in the closed interval [start, end]."""
    lo, hi = to_seconds(start), to_seconds(end)
    if lo > hi:
        raise ValueError("slice_time requires start <= end")
    i = int(np.searchsorted(d.index, lo, side="left"))
    j = int(np.searchsorted(d.index, hi, side="right"))
    return d.take(np.arange(i, j))


def concat_time(parts: Sequence[DataSet]) -> DataSet:
    """Stack DataSets along time and re-sort by timestamp."""
    parts = list(parts)
    if not parts:
        return DataSet()
    first = parts[0]
    schema = {n: a.feature_shape for n, a in first.arrays.items()}
    for p in parts[1:]:
        other = {n: a.feature_shape for n, a in p.arrays.items()}
        if other != schema:
            raise SchemaMismatch(f"cannot concatenate {sorted(schema)} with {sorted(other)}")
    if len(parts) == 1:
        return first
    index = np.concatenate([p.index for p in parts])
    order = np.argsort(index, kind="stable")
    index = index[order]
    if index.size > 1 and np.any(np.diff(index) == 0):
        dup = index[int(np.argmax(np.diff(index) == 0))]
        raise OverlappingIndices(f"timestamp {format_timestamp(dup)} appears in more than one part")
    arrays = {}
    for name in schema:
        vals = np.concatenate([p.arrays[name].values for p in parts])[order]
        arrays[name] = TimeArray(name, index, vals, first.arrays[name].feature_labels)
    return DataSet(arrays, index)
