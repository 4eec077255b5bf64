"""Observers invoked with a step's result after it is computed.

Callbacks only read the result; DataSets are immutable, so nothing a callback
does can reach the pipeline outputs.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar

import numpy as np

from ..core import DataSet
from ..csvio import write_csv
from ..errors import InvalidParameter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CallbackContext:
    output_dir: Path

    @classmethod
    def at(cls, directory: str | Path | None) -> CallbackContext:
        return cls(Path(directory) if directory is not None else Path.cwd())


class Callback:
    kind: ClassVar[str] = ""

    def __init__(self, **config: Any) -> None:
        self.config = dict(config)

    def __call__(self, step_id: str, data: DataSet, context: CallbackContext | None) -> None:
        raise NotImplementedError

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind, "config": dict(self.config)}


_CALLBACKS: dict[str, type[Callback]] = {}


def register_callback(kind: str):
    def deco(cls):
        cls.kind = kind
        _CALLBACKS[kind] = cls
        return cls

    return deco


def create_callback(kind: str, config: Mapping[str, Any] | None = None) -> Callback:
    if kind not in _CALLBACKS:
        raise InvalidParameter(f"unknown callback kind {kind!r} (known: {sorted(_CALLBACKS)})")
    try:
        return _CALLBACKS[kind](**dict(config or {}))
    except TypeError as exc:
        raise InvalidParameter(f"callback {kind}: {exc}") from None


@register_callback("csv_writer")
class CsvWriter(Callback):
    """Writes the step result to ``<output dir>/<path>`` (default ``<step id>.csv``)."""

    def __init__(self, path: str | None = None, precision: int | None = None) -> None:
        config: dict[str, Any] = {}
        if path is not None:
            config["path"] = path
        if precision is not None:
            config["precision"] = precision
        super().__init__(**config)
        self.path = path
        self.precision = precision

    def __call__(self, step_id, data, context):
        base = context.output_dir if context is not None else Path.cwd()
        target = base / (self.path or f"{step_id}.csv")
        write_csv(data, target, self.precision)
        log.debug("step %s: wrote %s", step_id, target)


@register_callback("summary_printer")
class SummaryPrinter(Callback):
    """Prints count, missing count, mean, min and max for every array."""

    def __init__(self, stream: str = "stdout", precision: int = 6) -> None:
        super().__init__(stream=stream, precision=precision)
        if stream not in ("stdout", "stderr"):
            raise InvalidParameter("summary_printer: stream must be 'stdout' or 'stderr'")
        self.stream = stream
        self.precision = precision

    def __call__(self, step_id, data, context):
        out = sys.stdout if self.stream == "stdout" else sys.stderr
        p = self.precision
        for name, arr in data.items():
            v = arr.values
            finite = v[np.isfinite(v)]
            if finite.size:
                stats = f"mean={finite.mean():.{p}g} min={finite.min():.{p}g} max={finite.max():.{p}g}"
            else:
                stats = "mean=nan min=nan max=nan"
            print(f"{step_id}.{name}: rows={len(arr)} missing={int(np.isnan(v).sum())} {stats}", file=out)
