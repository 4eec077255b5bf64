"""Pipeline graphs of steps: construction, ordering and execution.

A step's ``inputs`` map an input name to a reference. A reference is a source
name or a step id, optionally narrowed to one array with ``"step:array"``.
When a step runs, each referenced DataSet is renamed into the step's own
namespace and the pieces are merged with :func:`tsflow.core.align`:

* a single array is renamed to the input name;
* several arrays become ``"<input name>.<array name>"``.

A step's fit target is gathered the same way under the input name ``target``.
"""

from __future__ import annotations

import heapq
import logging
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import DataSet, align, concat_time
from ..errors import (
    CycleDetected,
    DanglingReference,
    DefinitionError,
    DuplicateId,
    MissingSource,
    NotFitted,
    TsflowError,
    UnknownInput,
)
from ..module import EMPTY_STATE, Module, ModuleState, transform
from ..module import fit as fit_module
from .callbacks import Callback, CallbackContext

log = logging.getLogger(__name__)

STEP_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
TARGET_INPUT = "target"


def parse_ref(ref: str) -> tuple[str, str | None]:
    upstream, _, array = ref.partition(":")
    return upstream, (array or None)


@dataclass(frozen=True)
class Step:
    id: str
    module: Module
    inputs: Mapping[str, str]
    target: str | None = None
    name: str | None = None
    callbacks: tuple[Callback, ...] = ()

    def __post_init__(self) -> None:
        if not STEP_ID_RE.match(self.id):
            raise DefinitionError(f"invalid step id {self.id!r}")
        object.__setattr__(self, "inputs", dict(self.inputs))
        object.__setattr__(self, "callbacks", tuple(self.callbacks))
        if not self.inputs:
            raise UnknownInput(f"step {self.id!r} declares no inputs", step=self.id)

    @property
    def label(self) -> str:
        return self.name or self.id

    def refs(self) -> list[str]:
        refs = [parse_ref(r)[0] for r in self.inputs.values()]
        if self.target is not None:
            refs.append(parse_ref(self.target)[0])
        return refs


def _namespace(d: DataSet, name: str, array: str | None) -> DataSet:
    if array is not None:
        d = d.select([array])
    if len(d) == 1:
        (only,) = d
        return d.rename({only: name})
    return d.rename({n: f"{name}.{n}" for n in d})


def gather(refs: Mapping[str, str], lookup) -> DataSet:
    merged: DataSet | None = None
    for name, ref in refs.items():
        upstream, array = parse_ref(ref)
        part = _namespace(lookup(upstream), name, array)
        merged = part if merged is None else align(merged, part)
    return merged


@dataclass
class Pipeline:
    """A DAG of steps with declared external sources and result sinks."""

    sources: Sequence[str] = ()
    sinks: Sequence[str] = ()
    name: str = "pipeline"
    steps: dict[str, Step] = field(default_factory=dict)
    states: dict[str, ModuleState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sources = list(self.sources)
        self.sinks = list(self.sinks)
        if len(set(self.sources)) != len(self.sources):
            raise DuplicateId("duplicate source names")
        self.trace: list[tuple[str, str]] = []

    # -- construction ----------------------------------------------------------

    def add_step(self, step: Step) -> Pipeline:
        if step.id in self.steps or step.id in self.sources:
            raise DuplicateId(f"id {step.id!r} already used", step=step.id)
        refs = step.refs()
        if step.id in refs:
            raise CycleDetected(f"step {step.id!r} depends on itself", step=step.id)
        for ref in refs:
            if ref not in self.steps and ref not in self.sources:
                raise UnknownInput(f"step {step.id!r} references unknown input {ref!r}", step=step.id)
        self.steps[step.id] = step
        self.states[step.id] = EMPTY_STATE
        return self

    def add(self, id: str, module: Module, inputs: Mapping[str, str], target: str | None = None, **kw) -> Pipeline:
        return self.add_step(Step(id, module, inputs, target, **kw))

    def add_sink(self, step_id: str) -> Pipeline:
        if step_id not in self.steps:
            raise DanglingReference(f"sink {step_id!r} is not a step")
        if step_id not in self.sinks:
            self.sinks.append(step_id)
        return self

    @classmethod
    def from_steps(cls, steps: Iterable[Step], sources: Sequence[str], sinks: Sequence[str], name: str = "pipeline"):
        """Build from steps listed in any order."""
        pending = {s.id: s for s in steps}
        order = topo_sort({sid: [r for r in s.refs() if r not in sources] for sid, s in pending.items()}, sources)
        pipe = cls(sources, (), name)
        for sid in order:
            pipe.add_step(pending[sid])
        for sink in sinks:
            pipe.add_sink(sink)
        return pipe

    # -- structure -------------------------------------------------------------

    def dependencies(self) -> dict[str, list[str]]:
        return {sid: [r for r in s.refs() if r in self.steps] for sid, s in self.steps.items()}

    def topo_order(self) -> list[str]:
        return topo_sort(self.dependencies(), self.sources)

    def validate(self) -> None:
        if not self.sinks:
            raise DefinitionError(f"pipeline {self.name!r} declares no sinks")
        for sink in self.sinks:
            if sink not in self.steps:
                raise DanglingReference(f"sink {sink!r} is not a step")
        used = {r for s in self.steps.values() for r in s.refs()}
        for src in self.sources:
            if src not in used:
                log.warning("pipeline %s: source %r is never used", self.name, src)

    def lookback(self) -> int | None:
        """Largest sum of lookbacks along any input path ending in a sink."""
        memo: dict[str, int | None] = {}
        for sid in self.topo_order():
            step = self.steps[sid]
            own = step.module.lookback
            ups = [memo[parse_ref(r)[0]] if parse_ref(r)[0] in self.steps else 0 for r in step.inputs.values()]
            memo[sid] = None if own is None or any(u is None for u in ups) else own + max(ups, default=0)
        vals = [memo[s] for s in self.sinks]
        if any(v is None for v in vals):
            return None
        return max(vals, default=0)

    @property
    def requires_fit(self) -> bool:
        return any(s.module.requires_fit for s in self.steps.values())

    def is_fitted(self) -> bool:
        return all(self.states[sid].fitted for sid, s in self.steps.items() if s.module.requires_fit)

    # -- execution -------------------------------------------------------------

    def train(self, data: DataSet, callback_dir: str | Path | None = None) -> dict[str, DataSet]:
        """Fit every unfitted trainable step in order and return the sink outputs."""
        self.validate()
        self.trace = []
        outputs = execute(self, self.states, data, fit=True, context=CallbackContext.at(callback_dir), trace=self.trace)
        return {s: outputs[s] for s in self.sinks}

    def run(self, data: DataSet, callback_dir: str | Path | None = None) -> dict[str, DataSet]:
        self.validate()
        self.check_fitted(self.states)
        self.trace = []
        outputs = execute(self, self.states, data, fit=False, context=CallbackContext.at(callback_dir), trace=self.trace)
        return {s: outputs[s] for s in self.sinks}

    def check_fitted(self, states: Mapping[str, ModuleState]) -> None:
        for sid in self.topo_order():
            if self.steps[sid].module.requires_fit and not states[sid].fitted:
                raise NotFitted(f"module {self.steps[sid].module.type_id!r} has not been fitted", step=sid)

    def run_online(self, data: DataSet, callback_dir: str | Path | None = None) -> dict[str, DataSet]:
        """Feed ``data`` one timestamp at a time; trainable steps stay frozen."""
        self.validate()
        self.check_fitted(self.states)
        runner = PipelineRunner(self, self.states, keep=self._observed_steps())
        rows: dict[str, list[DataSet]] = {sid: [] for sid in runner.keep}
        for i in range(data.n_rows):
            step_rows = runner.push(data.take(np.array([i])))
            for sid in runner.keep:
                rows[sid].append(step_rows[sid])
        outputs = {sid: concat_time(parts) if parts else DataSet() for sid, parts in rows.items()}
        context = CallbackContext.at(callback_dir)
        for sid in self.topo_order():
            for cb in self.steps[sid].callbacks:
                cb(sid, outputs[sid], context)
        return {s: outputs[s] for s in self.sinks}

    def _observed_steps(self) -> list[str]:
        keep = list(self.sinks)
        keep += [sid for sid, s in self.steps.items() if s.callbacks and sid not in keep]
        return keep

    # -- persistence -----------------------------------------------------------

    def save(self, directory: str | Path) -> dict:
        from .persistence import save_pipeline

        return save_pipeline(self, directory)

    @classmethod
    def load(cls, directory: str | Path) -> Pipeline:
        from .persistence import load_pipeline

        return load_pipeline(directory)


def topo_sort(deps: Mapping[str, Iterable[str]], sources: Iterable[str] = ()) -> list[str]:
    """Kahn's algorithm; ready nodes are released in ascending id order."""
    sources = set(sources)
    deps = {k: set(v) - sources for k, v in deps.items()}
    for node, ds in deps.items():
        missing = ds - deps.keys()
        if missing:
            raise DanglingReference(f"step {node!r} references unknown input {sorted(missing)[0]!r}", step=node)
    children: dict[str, list[str]] = {k: [] for k in deps}
    indegree = {k: len(v) for k, v in deps.items()}
    for node, ds in deps.items():
        for d in ds:
            children[d].append(node)
    ready = [k for k, n in indegree.items() if n == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for child in children[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, child)
    if len(order) != len(deps):
        stuck = sorted(k for k, n in indegree.items() if n > 0)
        raise CycleDetected(f"cycle among steps {stuck}", step=stuck[0])
    return order


def _source_lookup(pipeline: Pipeline, data: DataSet, outputs: Mapping[str, DataSet]):
    def lookup(ref: str) -> DataSet:
        if ref in outputs:
            return outputs[ref]
        if ref in pipeline.sources:
            if ref not in data:
                raise MissingSource(f"input data has no column for source {ref!r}")
            return DataSet([data[ref]])
        raise DanglingReference(f"unknown reference {ref!r}")

    return lookup


def execute(
    pipeline: Pipeline,
    states: dict[str, ModuleState],
    data: DataSet,
    *,
    fit: bool,
    context: CallbackContext | None = None,
    trace: list | None = None,
) -> dict[str, DataSet]:
    """Run every step in topological order, fitting first when ``fit`` is set.

    ``states`` is updated in place with newly fitted states. Errors are
    re-raised with the failing step id attached; nothing after it runs.
    """
    outputs: dict[str, DataSet] = {}
    lookup = _source_lookup(pipeline, data, outputs)
    for sid in pipeline.topo_order():
        step = pipeline.steps[sid]
        if trace is not None:
            trace.append(("start", sid))
        try:
            inputs = gather(step.inputs, lookup)
            state = states.get(sid, EMPTY_STATE)
            if fit and step.module.requires_fit and not state.fitted:
                target = gather({TARGET_INPUT: step.target}, lookup) if step.target else None
                state = states[sid] = fit_module(step.module, inputs, target)
            out = transform(step.module, state, inputs)
        except TsflowError as exc:
            raise exc.with_step(sid) from exc
        outputs[sid] = out
        for cb in step.callbacks:
            cb(sid, out, context)
        if trace is not None:
            trace.append(("done", sid))
    return outputs


class PipelineRunner:
    """Online execution: each step owns an online runner with its own history buffer."""

    def __init__(self, pipeline: Pipeline, states: Mapping[str, ModuleState], keep: Sequence[str] | None = None):
        self.pipeline = pipeline
        self.order = pipeline.topo_order()
        self.keep = list(keep if keep is not None else pipeline.sinks)
        self.runners = {}
        for sid in self.order:
            try:
                self.runners[sid] = pipeline.steps[sid].module.online(states.get(sid, EMPTY_STATE))
            except TsflowError as exc:
                raise exc.with_step(sid) from exc

    def push(self, row: DataSet) -> dict[str, DataSet]:
        outputs: dict[str, DataSet] = {}
        lookup = _source_lookup(self.pipeline, row, outputs)
        for sid in self.order:
            try:
                outputs[sid] = self.runners[sid].push(gather(self.pipeline.steps[sid].inputs, lookup))
            except TsflowError as exc:
                raise exc.with_step(sid) from exc
        return {sid: outputs[sid] for sid in self.keep}
