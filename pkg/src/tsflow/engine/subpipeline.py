"""Wrapping a whole pipeline so it can sit in a single step of another."""

from __future__ import annotations

from ..core import DataSet, align
from ..errors import TsflowError
from ..module import (
    EMPTY_STATE,
    Module,
    ModuleState,
    OnlineRunner,
    load_state,
    pack_blobs,
    register,
    save_state,
    unpack_blobs,
)
from .graph import TARGET_INPUT, Pipeline, PipelineRunner, execute


def merge_sinks(pipeline: Pipeline, outputs: dict[str, DataSet]) -> DataSet:
    """One sink passes through unchanged; several are namespaced by sink id and aligned."""
    if len(pipeline.sinks) == 1:
        return outputs[pipeline.sinks[0]]
    merged = None
    for sink in pipeline.sinks:
        d = outputs[sink]
        d = d.rename({n: sink for n in d}) if len(d) == 1 else d.rename({n: f"{sink}.{n}" for n in d})
        merged = d if merged is None else align(merged, d)
    return merged


@register("subpipeline")
class SubPipeline(Module):
    """Fit trains the inner pipeline, transform runs it.

    The step's gathered inputs become the inner sources by name; a fit target
    is offered to the inner pipeline as the source ``target``.
    """

    def __init__(self, pipeline: Pipeline, name: str | None = None) -> None:
        name = name or pipeline.name
        super().__init__(name=name)
        self.name = name
        self.pipeline = pipeline
        pipeline.validate()

    @property
    def requires_fit(self) -> bool:
        return self.pipeline.requires_fit

    @property
    def lookback(self):
        return self.pipeline.lookback()

    def _wrap(self, exc: TsflowError) -> TsflowError:
        return exc.with_prefix(f"subpipeline {self.name!r}")

    def _data(self, inputs: DataSet, target: DataSet | None) -> DataSet:
        if target is None:
            return inputs
        return align(inputs, target) if TARGET_INPUT not in inputs else inputs

    def fit_payload(self, inputs, target):
        states = {sid: EMPTY_STATE for sid in self.pipeline.steps}
        try:
            execute(self.pipeline, states, self._data(inputs, target), fit=True)
        except TsflowError as exc:
            raise self._wrap(exc) from exc
        steps = self.pipeline.steps
        return pack_blobs({sid: save_state(steps[sid].module, st) for sid, st in states.items()})

    def inner_states(self, state: ModuleState) -> dict[str, ModuleState]:
        if not state.blob:
            return {sid: EMPTY_STATE for sid in self.pipeline.steps}
        blobs = unpack_blobs(state.blob)
        return {sid: load_state(self.pipeline.steps[sid].module, blobs[sid]) for sid in self.pipeline.steps}

    def apply(self, state, inputs):
        states = self.inner_states(state)
        try:
            self.pipeline.check_fitted(states)
            outputs = execute(self.pipeline, states, inputs, fit=False)
        except TsflowError as exc:
            raise self._wrap(exc) from exc
        return merge_sinks(self.pipeline, outputs)

    def online(self, state):
        return SubPipelineRunner(self, self.inner_states(state))


class SubPipelineRunner(OnlineRunner):
    def __init__(self, module: SubPipeline, states: dict[str, ModuleState]) -> None:
        self.module = module
        try:
            self.runner = PipelineRunner(module.pipeline, states)
        except TsflowError as exc:
            raise module._wrap(exc) from exc

    def push(self, row):
        try:
            outputs = self.runner.push(row)
        except TsflowError as exc:
            raise self.module._wrap(exc) from exc
        return merge_sinks(self.module.pipeline, outputs)


def as_subpipeline(inner: Pipeline, name: str | None = None) -> SubPipeline:
    return SubPipeline(inner, name)
