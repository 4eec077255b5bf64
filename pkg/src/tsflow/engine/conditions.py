"""If-then-else routing of individual timestamps.

A :class:`ConditionalModule` evaluates a predicate once per row, hands the
true rows to its ``then`` module and the false rows to its ``otherwise``
module, and merges both results back on the time axis. Each branch only ever
sees its own rows, in batch as well as online.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..core import DataSet, concat_time
from ..errors import InvalidParameter, PredicateShapeMismatch, TsflowError
from ..module import (
    EMPTY_STATE,
    Module,
    ModuleState,
    OnlineRunner,
    fit,
    load_state,
    pack_blobs,
    register,
    save_state,
    transform,
    unpack_blobs,
)

Predicate = Callable[..., np.ndarray]
_PREDICATES: dict[str, Predicate] = {}


def register_predicate(name: str):
    def deco(fn: Predicate) -> Predicate:
        _PREDICATES[name] = fn
        return fn

    return deco


def registered_predicates() -> list[str]:
    return sorted(_PREDICATES)


def _hours(index: np.ndarray) -> np.ndarray:
    return (index % 86400) // 3600


@register_predicate("hour_between")
def hour_between(index, inputs, start: int, end: int) -> np.ndarray:
    """Half-open ``[start, end)`` in UTC hours; wraps past midnight when start > end."""
    h = _hours(index)
    if start <= end:
        return (h >= start) & (h < end)
    return (h >= start) | (h < end)


@register_predicate("weekday_in")
def weekday_in(index, inputs, *days: int) -> np.ndarray:
    return np.isin((index // 86400 + 3) % 7, days)


@register_predicate("is_weekend")
def is_weekend(index, inputs) -> np.ndarray:
    return (index // 86400 + 3) % 7 >= 5


@register_predicate("always")
def always(index, inputs) -> np.ndarray:
    return np.ones(index.shape[0], dtype=bool)


@register_predicate("never")
def never(index, inputs) -> np.ndarray:
    return np.zeros(index.shape[0], dtype=bool)


@register_predicate("greater_than")
def greater_than(index, inputs, array: str, threshold: float) -> np.ndarray:
    v = inputs[array].values
    with np.errstate(invalid="ignore"):
        return v > threshold


@dataclass(frozen=True)
class ConditionSpec:
    predicate: str
    args: tuple = ()
    negate: bool = False

    def __post_init__(self) -> None:
        if self.predicate not in _PREDICATES:
            raise InvalidParameter(f"unknown predicate {self.predicate!r} (known: {registered_predicates()})")
        object.__setattr__(self, "args", tuple(self.args))

    def evaluate(self, inputs: DataSet) -> np.ndarray:
        try:
            mask = np.asarray(_PREDICATES[self.predicate](inputs.index, inputs, *self.args))
        except TypeError as exc:
            raise InvalidParameter(f"predicate {self.predicate}: {exc}") from None
        if mask.shape != (inputs.n_rows,):
            raise PredicateShapeMismatch(
                f"predicate {self.predicate} returned shape {mask.shape} for {inputs.n_rows} rows"
            )
        mask = mask.astype(bool)
        return ~mask if self.negate else mask

    def to_dict(self) -> dict[str, Any]:
        return {"predicate": self.predicate, "args": list(self.args), "negate": self.negate}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ConditionSpec:
        return cls(d["predicate"], tuple(d.get("args", ())), bool(d.get("negate", False)))


def _branch_error(exc: TsflowError, branch: str) -> TsflowError:
    return exc.with_prefix(f"{branch} branch")


@register("condition")
class ConditionalModule(Module):
    def __init__(self, condition: ConditionSpec, then: Module, otherwise: Module) -> None:
        super().__init__()
        self.condition = condition
        self.then = then
        self.otherwise = otherwise

    @property
    def requires_fit(self) -> bool:
        return self.then.requires_fit or self.otherwise.requires_fit

    @property
    def lookback(self):
        # a branch sees only its own rows, so its history can reach arbitrarily far back
        if self.then.lookback == 0 and self.otherwise.lookback == 0:
            return 0
        return None

    def branches(self):
        return (("then", self.then), ("else", self.otherwise))

    def split(self, inputs: DataSet) -> tuple[np.ndarray, np.ndarray]:
        mask = self.condition.evaluate(inputs)
        return np.flatnonzero(mask), np.flatnonzero(~mask)

    def fit_payload(self, inputs, target):
        blobs = {}
        for (label, module), rows in zip(self.branches(), self.split(inputs)):
            state = EMPTY_STATE
            if module.requires_fit and rows.size:
                try:
                    state = fit(module, inputs.take(rows), target.take(rows) if target is not None else None)
                except TsflowError as exc:
                    raise _branch_error(exc, label) from exc
            blobs[label] = save_state(module, state)
        return pack_blobs(blobs)

    def branch_states(self, state: ModuleState) -> tuple[ModuleState, ModuleState]:
        if not state.blob:
            return EMPTY_STATE, EMPTY_STATE
        blobs = unpack_blobs(state.blob)
        return load_state(self.then, blobs["then"]), load_state(self.otherwise, blobs["else"])

    def apply(self, state, inputs):
        parts = []
        for (label, module), st, rows in zip(self.branches(), self.branch_states(state), self.split(inputs)):
            if rows.size == 0:
                continue
            try:
                parts.append(transform(module, st, inputs.take(rows)))
            except TsflowError as exc:
                raise _branch_error(exc, label) from exc
        if not parts:
            return DataSet({}, inputs.index)
        return concat_time(parts)

    def online(self, state):
        return ConditionalRunner(self, state)


class ConditionalRunner(OnlineRunner):
    def __init__(self, module: ConditionalModule, state: ModuleState) -> None:
        self.condition = module.condition
        then_state, else_state = module.branch_states(state)
        self.then = module.then.online(then_state)
        self.otherwise = module.otherwise.online(else_state)

    def push(self, row):
        if self.condition.evaluate(row)[0]:
            return self.then.push(row)
        return self.otherwise.push(row)
