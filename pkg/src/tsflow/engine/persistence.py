"""Saving and loading whole pipelines.

Directory layout::

    manifest.json        structure, parameters, versions
    state/<step>.bin     one framed state blob per fitted step

Parameters live only in the manifest, learned state only in the blobs, so a
hand-edited parameter takes effect on the next load.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any

from .. import __version__
from ..errors import (
    CorruptManifest,
    CorruptState,
    DuplicateId,
    InvalidParameter,
    ManifestNotFound,
    ManifestVersionMismatch,
    TsflowError,
    UnknownTypeId,
)
from ..module import Module, create, is_registered, load_state, save_state
from .callbacks import create_callback
from .conditions import ConditionalModule, ConditionSpec
from .graph import Pipeline, Step
from .subpipeline import SubPipeline

MANIFEST_NAME = "manifest.json"
STATE_DIR = "state"
FORMAT_VERSION = 1

Resolver = Callable[[str], Pipeline]


# -- module specs ---------------------------------------------------------------


def module_spec(module: Module, subpipelines: dict[str, Pipeline]) -> dict[str, Any]:
    """JSON form of a module; subpipelines it references are collected by name."""
    if isinstance(module, SubPipeline):
        known = subpipelines.get(module.name)
        if known is not None and known is not module.pipeline:
            raise DuplicateId(f"two different subpipelines are named {module.name!r}")
        subpipelines[module.name] = module.pipeline
        return {"type_id": "subpipeline", "params": {"name": module.name}}
    if isinstance(module, ConditionalModule):
        return {"type_id": "condition", "params": {}, "condition": condition_spec(module, subpipelines)}
    return module.spec()


def condition_spec(module: ConditionalModule, subpipelines: dict[str, Pipeline]) -> dict[str, Any]:
    d = module.condition.to_dict()
    d["then"] = module_spec(module.then, subpipelines)
    d["else"] = module_spec(module.otherwise, subpipelines)
    return d


def module_from_spec(spec: Mapping[str, Any], resolve: Resolver, where: str) -> Module:
    try:
        type_id = spec["type_id"]
    except (KeyError, TypeError):
        raise CorruptManifest("module entry without a type_id", location=where) from None
    params = spec.get("params") or {}
    if not isinstance(params, Mapping):
        raise InvalidParameter("params must be an object", location=where)
    if not is_registered(type_id):
        raise UnknownTypeId(f"unknown module type_id {type_id!r}", location=where)
    try:
        if type_id == "subpipeline":
            return SubPipeline(resolve(params.get("name", "")), params.get("name"))
        if type_id == "condition":
            cond = spec.get("condition")
            if not isinstance(cond, Mapping):
                raise InvalidParameter("condition step without a condition", location=where)
            return condition_from_spec(cond, resolve, where)
        return create(type_id, params)
    except TsflowError as exc:
        if exc.location is None:
            exc = type(exc)(exc.message, step=exc.step, location=where)
        raise exc from None


def condition_from_spec(cond: Mapping[str, Any], resolve: Resolver, where: str) -> ConditionalModule:
    for key in ("predicate", "then", "else"):
        if key not in cond:
            raise InvalidParameter(f"condition lacks {key!r}", location=where)
    spec = ConditionSpec.from_dict(cond)
    then = module_from_spec(cond["then"], resolve, f"{where}.condition.then")
    otherwise = module_from_spec(cond["else"], resolve, f"{where}.condition.else")
    return ConditionalModule(spec, then, otherwise)


# -- manifests ------------------------------------------------------------------


def pipeline_manifest(pipeline: Pipeline) -> dict[str, Any]:
    subs: dict[str, Pipeline] = {}
    steps, edges, conditions, callbacks = [], [], {}, {}
    for sid in pipeline.topo_order():
        step = pipeline.steps[sid]
        spec = module_spec(step.module, subs)
        entry = {"id": sid, "type_id": spec["type_id"], "params": spec["params"]}
        if step.name:
            entry["name"] = step.name
        steps.append(entry)
        if "condition" in spec:
            conditions[sid] = spec["condition"]
        for name, ref in step.inputs.items():
            edges.append({"from": ref, "to": sid, "input": name})
        if step.target is not None:
            edges.append({"from": step.target, "to": sid, "role": "target"})
        if step.callbacks:
            callbacks[sid] = [cb.spec() for cb in step.callbacks]
    return {
        "format_version": FORMAT_VERSION,
        "name": pipeline.name,
        "sources": list(pipeline.sources),
        "sinks": list(pipeline.sinks),
        "steps": steps,
        "edges": edges,
        "conditions": conditions,
        "callbacks": callbacks,
        "subpipelines": {name: pipeline_manifest(p) for name, p in subs.items()},
    }


def pipeline_from_manifest(m: Mapping[str, Any], parent: Resolver | None = None, where: str = MANIFEST_NAME) -> Pipeline:
    try:
        sub_manifests = dict(m.get("subpipelines", {}))
        loaded: dict[str, Pipeline] = {}

        def resolve(name: str) -> Pipeline:
            if name in loaded:
                return loaded[name]
            if name in sub_manifests:
                loaded[name] = pipeline_from_manifest(sub_manifests[name], resolve, f"{where}: subpipelines.{name}")
                return loaded[name]
            if parent is not None:
                return parent(name)
            raise InvalidParameter(f"unknown subpipeline {name!r}", location=where)

        inputs: dict[str, dict[str, str]] = {}
        targets: dict[str, str] = {}
        for i, e in enumerate(m["edges"]):
            if e.get("role") == "target":
                targets[e["to"]] = e["from"]
            else:
                inputs.setdefault(e["to"], {})[e["input"]] = e["from"]
        conditions = m.get("conditions", {})
        callbacks = m.get("callbacks", {})
        steps = []
        for i, entry in enumerate(m["steps"]):
            sid = entry["id"]
            loc = f"{where}: steps[{i}]"
            spec = dict(entry)
            if sid in conditions:
                spec["condition"] = conditions[sid]
            module = module_from_spec(spec, resolve, loc)
            cbs = [create_callback(c["kind"], c.get("config")) for c in callbacks.get(sid, [])]
            steps.append(Step(sid, module, inputs.get(sid, {}), targets.get(sid), entry.get("name"), cbs))
        return Pipeline.from_steps(steps, m["sources"], m["sinks"], m.get("name", "pipeline"))
    except (KeyError, TypeError, AttributeError) as exc:
        raise CorruptManifest(f"malformed manifest: {exc!r}", location=where) from None


def save_pipeline(pipeline: Pipeline, directory: str | Path) -> dict[str, Any]:
    pipeline.validate()
    root = Path(directory)
    (root / STATE_DIR).mkdir(parents=True, exist_ok=True)
    manifest = pipeline_manifest(pipeline)
    manifest["library"] = {"name": "tsflow", "version": __version__}
    states = {}
    for sid in pipeline.topo_order():
        state = pipeline.states[sid]
        if state.fitted:
            rel = f"{STATE_DIR}/{sid}.bin"
            (root / rel).write_bytes(save_state(pipeline.steps[sid].module, state))
            states[sid] = rel
    for stale in (root / STATE_DIR).glob("*.bin"):
        if f"{STATE_DIR}/{stale.name}" not in states.values():
            stale.unlink()
    manifest["states"] = states
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_pipeline(directory: str | Path) -> Pipeline:
    root = Path(directory)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise ManifestNotFound(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptManifest(f"unreadable manifest: {exc}", location=str(path)) from None
    if not isinstance(manifest, dict):
        raise CorruptManifest("manifest is not a JSON object", location=str(path))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ManifestVersionMismatch(f"manifest format {version!r}, this build reads {FORMAT_VERSION}")
    pipeline = pipeline_from_manifest(manifest, where=str(path))
    for sid, rel in manifest.get("states", {}).items():
        if sid not in pipeline.steps:
            raise CorruptManifest(f"state for unknown step {sid!r}", location=str(path))
        blob_path = root / rel
        if not blob_path.is_file():
            raise CorruptState(f"missing state file {rel}", step=sid)
        try:
            pipeline.states[sid] = load_state(pipeline.steps[sid].module, blob_path.read_bytes())
        except TsflowError as exc:
            raise exc.with_step(sid) from None
    return pipeline
