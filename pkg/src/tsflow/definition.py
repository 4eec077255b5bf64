"""Declarative pipeline definitions (JSON).

Example::

    {
      "version": 1,
      "sources": ["load"],
      "steps": [
        {"id": "smooth", "type_id": "rolling_mean", "params": {"window": 3}, "inputs": {"x": "load"}},
        {"id": "route", "type_id": "condition", "inputs": {"x": "smooth"},
         "condition": {"predicate": "hour_between", "args": [8, 20],
                       "then": {"type_id": "persistence", "params": {"horizon": 1}},
                       "else": {"type_id": "subpipeline", "params": {"name": "night"}}}}
      ],
      "sinks": ["route"],
      "subpipelines": {"night": {"sources": ["x"], "steps": [...], "sinks": [...]}}
    }

Semantic errors carry a field path such as ``steps[2].inputs.x`` as their
location; JSON syntax errors carry ``line:column``.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .errors import CycleDetected, DanglingReference, DefinitionSyntaxError, TsflowError, UnknownTypeId
from .engine.callbacks import create_callback
from .engine.graph import Pipeline, Step, parse_ref, topo_sort
from .engine.persistence import module_from_spec
from .module import is_registered

DEFINITION_VERSION = 1

_STEP_KEYS = {"id", "name", "type_id", "params", "inputs", "target", "condition", "callbacks"}
_TOP_KEYS = {"version", "name", "sources", "steps", "sinks", "subpipelines"}


@dataclass
class StepDefinition:
    id: str
    type_id: str
    inputs: dict[str, str]
    params: dict[str, Any] = field(default_factory=dict)
    target: str | None = None
    name: str | None = None
    condition: dict[str, Any] | None = None
    callbacks: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "type_id": self.type_id, "params": self.params, "inputs": self.inputs}
        if self.name is not None:
            d["name"] = self.name
        if self.target is not None:
            d["target"] = self.target
        if self.condition is not None:
            d["condition"] = self.condition
        if self.callbacks:
            d["callbacks"] = self.callbacks
        return d


@dataclass
class PipelineDefinition:
    sources: list[str]
    steps: list[StepDefinition]
    sinks: list[str]
    subpipelines: dict[str, PipelineDefinition] = field(default_factory=dict)
    name: str = "pipeline"
    version: int = DEFINITION_VERSION

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "version": self.version,
            "name": self.name,
            "sources": self.sources,
            "steps": [s.to_dict() for s in self.steps],
            "sinks": self.sinks,
        }
        if self.subpipelines:
            d["subpipelines"] = {k: v.to_dict() for k, v in self.subpipelines.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def build(self) -> Pipeline:
        return build_pipeline(self)


def _fail(msg: str, where: str) -> DefinitionSyntaxError:
    return DefinitionSyntaxError(msg, location=where)


def _expect(value, kind, where: str, what: str):
    if not isinstance(value, kind):
        raise _fail(f"{what} must be {getattr(kind, '__name__', kind)}", where)
    return value


def _str_list(value, where: str) -> list[str]:
    _expect(value, list, where, "value")
    for i, v in enumerate(value):
        _expect(v, str, f"{where}[{i}]", "entry")
    return list(value)


def _check_module_spec(spec, where: str, sub_names: set[str]) -> None:
    _expect(spec, Mapping, where, "module")
    tid = spec.get("type_id")
    if not isinstance(tid, str):
        raise _fail("type_id must be a string", f"{where}.type_id")
    if not is_registered(tid):
        raise UnknownTypeId(f"unknown module type_id {tid!r}", location=f"{where}.type_id")
    params = spec.get("params", {})
    _expect(params, Mapping, f"{where}.params", "params")
    if tid == "subpipeline" and params.get("name") not in sub_names:
        raise DanglingReference(f"unknown subpipeline {params.get('name')!r}", location=f"{where}.params.name")
    if tid == "condition":
        cond = spec.get("condition")
        _expect(cond, Mapping, f"{where}.condition", "condition")
        _check_condition(cond, f"{where}.condition", sub_names)


def _check_condition(cond: Mapping, where: str, sub_names: set[str]) -> None:
    if not isinstance(cond.get("predicate"), str):
        raise _fail("predicate must be a string", f"{where}.predicate")
    _expect(cond.get("args", []), list, f"{where}.args", "args")
    for branch in ("then", "else"):
        if branch not in cond:
            raise _fail(f"missing {branch!r} branch", where)
        _check_module_spec(cond[branch], f"{where}.{branch}", sub_names)


def _parse_step(raw, where: str, sub_names: set[str]) -> StepDefinition:
    _expect(raw, Mapping, where, "step")
    unknown = set(raw) - _STEP_KEYS
    if unknown:
        raise _fail(f"unknown step field(s) {sorted(unknown)}", where)
    sid = raw.get("id")
    if not isinstance(sid, str) or not sid:
        raise _fail("step id must be a non-empty string", f"{where}.id")
    condition = raw.get("condition")
    type_id = raw.get("type_id", "condition" if condition is not None else None)
    spec = {"type_id": type_id, "params": raw.get("params", {})}
    if condition is not None:
        spec["condition"] = condition
    _check_module_spec(spec, where, sub_names)
    inputs = _expect(raw.get("inputs"), Mapping, f"{where}.inputs", "inputs")
    for k, v in inputs.items():
        _expect(v, str, f"{where}.inputs.{k}", "input reference")
    target = raw.get("target")
    if target is not None:
        _expect(target, str, f"{where}.target", "target")
    callbacks = raw.get("callbacks", [])
    _expect(callbacks, list, f"{where}.callbacks", "callbacks")
    for i, cb in enumerate(callbacks):
        _expect(cb, Mapping, f"{where}.callbacks[{i}]", "callback")
        if not isinstance(cb.get("kind"), str):
            raise _fail("callback kind must be a string", f"{where}.callbacks[{i}].kind")
    name = raw.get("name")
    if name is not None:
        _expect(name, str, f"{where}.name", "name")
    return StepDefinition(
        id=sid,
        type_id=type_id,
        inputs=dict(inputs),
        params=dict(spec["params"]),
        target=target,
        name=name,
        condition=dict(condition) if condition is not None else None,
        callbacks=[dict(cb) for cb in callbacks],
    )


def _from_obj(obj, where: str, outer_subs: set[str]) -> PipelineDefinition:
    _expect(obj, Mapping, where or "<root>", "definition")
    prefix = f"{where}." if where else ""
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise _fail(f"unknown field(s) {sorted(unknown)}", where or "<root>")
    version = obj.get("version", DEFINITION_VERSION)
    if version != DEFINITION_VERSION:
        raise _fail(f"unsupported definition version {version!r}", f"{prefix}version")
    name = obj.get("name", "pipeline")
    _expect(name, str, f"{prefix}name", "name")
    sources = _str_list(obj.get("sources", []), f"{prefix}sources")
    sinks = _str_list(obj.get("sinks", []), f"{prefix}sinks")
    raw_subs = _expect(obj.get("subpipelines", {}), Mapping, f"{prefix}subpipelines", "subpipelines")
    visible = outer_subs | set(raw_subs)
    subs = {k: _from_obj(v, f"{prefix}subpipelines.{k}", visible) for k, v in raw_subs.items()}
    raw_steps = _expect(obj.get("steps"), list, f"{prefix}steps", "steps")
    steps = [_parse_step(s, f"{prefix}steps[{i}]", visible) for i, s in enumerate(raw_steps)]

    ids: dict[str, int] = {}
    for i, s in enumerate(steps):
        if s.id in ids or s.id in sources:
            raise _fail(f"duplicate id {s.id!r}", f"{prefix}steps[{i}].id")
        ids[s.id] = i
    for i, s in enumerate(steps):
        refs = [(f"inputs.{k}", r) for k, r in s.inputs.items()]
        if s.target is not None:
            refs.append(("target", s.target))
        for field_name, ref in refs:
            upstream = parse_ref(ref)[0]
            if upstream not in ids and upstream not in sources:
                raise DanglingReference(
                    f"reference to unknown step or source {upstream!r}", location=f"{prefix}steps[{i}].{field_name}"
                )
    for j, sink in enumerate(sinks):
        if sink not in ids:
            raise DanglingReference(f"sink {sink!r} is not a step", location=f"{prefix}sinks[{j}]")
    if not sinks:
        raise _fail("at least one sink is required", f"{prefix}sinks")
    deps = {s.id: [parse_ref(r)[0] for r in list(s.inputs.values()) + ([s.target] if s.target else [])] for s in steps}
    try:
        topo_sort(deps, sources)
    except CycleDetected as exc:
        raise CycleDetected(exc.message, location=f"{prefix}steps[{ids[exc.step]}]") from None
    return PipelineDefinition(sources, steps, sinks, subs, name, version)


def parse_definition(text: str, where: str = "<definition>") -> PipelineDefinition:
    """Parse and validate; the result is guaranteed to build into an acyclic pipeline."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DefinitionSyntaxError(exc.msg, location=f"{where}:{exc.lineno}:{exc.colno}") from None
    defn = _from_obj(obj, "", set())
    build_pipeline(defn)
    return defn


def definition_from_dict(obj: Mapping[str, Any]) -> PipelineDefinition:
    return parse_definition(json.dumps(obj))


def build_pipeline(defn: PipelineDefinition, parent=None, where: str = "") -> Pipeline:
    built: dict[str, Pipeline] = {}
    prefix = f"{where}." if where else ""

    def resolve(name: str) -> Pipeline:
        if name not in built:
            if name in defn.subpipelines:
                built[name] = build_pipeline(defn.subpipelines[name], resolve, f"{prefix}subpipelines.{name}")
            elif parent is not None:
                return parent(name)
            else:
                raise DanglingReference(f"unknown subpipeline {name!r}", location=where or "<root>")
        return built[name]

    steps = []
    for i, s in enumerate(defn.steps):
        loc = f"{prefix}steps[{i}]"
        spec = {"type_id": s.type_id, "params": s.params}
        if s.condition is not None:
            spec["condition"] = s.condition
        module = module_from_spec(spec, resolve, loc)
        try:
            cbs = [create_callback(cb["kind"], cb.get("config")) for cb in s.callbacks]
            steps.append(Step(s.id, module, s.inputs, s.target, s.name, cbs))
        except TsflowError as exc:
            raise type(exc)(exc.message, step=exc.step, location=loc) from None
    return Pipeline.from_steps(steps, defn.sources, defn.sinks, defn.name)
