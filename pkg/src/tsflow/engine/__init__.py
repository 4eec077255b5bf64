"""Pipeline graphs, conditional routing, subpipelines, callbacks and persistence."""

from ..module import EMPTY_STATE, ModuleState, pack_blobs, save_state, transform

from .callbacks import Callback, CallbackContext, CsvWriter, SummaryPrinter, create_callback, register_callback
from .conditions import ConditionalModule, ConditionSpec, register_predicate, registered_predicates
from .graph import Pipeline, Step, execute, gather, parse_ref, topo_sort
from .persistence import load_pipeline, pipeline_manifest, save_pipeline
from .subpipeline import SubPipeline, as_subpipeline


def execute_condition(condition: ConditionSpec, then, otherwise, inputs, states=None):
    """Route ``inputs`` row by row through two fit-free or already fitted modules."""
    module = ConditionalModule(condition, then, otherwise)
    if states is None:
        return transform(module, EMPTY_STATE, inputs)
    blob = pack_blobs({"then": save_state(then, states[0]), "else": save_state(otherwise, states[1])})
    return transform(module, ModuleState(True, blob), inputs)


__all__ = [
    "Callback",
    "CallbackContext",
    "ConditionSpec",
    "ConditionalModule",
    "CsvWriter",
    "Pipeline",
    "Step",
    "SubPipeline",
    "SummaryPrinter",
    "as_subpipeline",
    "create_callback",
    "execute",
    "execute_condition",
    "gather",
    "load_pipeline",
    "parse_ref",
    "pipeline_manifest",
    "register_callback",
    "register_predicate",
    "registered_predicates",
    "save_pipeline",
    "topo_sort",
]
