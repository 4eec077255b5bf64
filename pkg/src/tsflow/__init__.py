"""Non-sequential fit/transform pipelines over labeled time series."""

__version__ = "0.1.0"

from . import estimators, library  # noqa: E402  (registers module types)
from .core import DataSet, TimeArray, align, concat_time, make_index, slice_time  # noqa: E402
from .engine import ConditionalModule, ConditionSpec, Pipeline, Step, SubPipeline, as_subpipeline  # noqa: E402
from .engine import load_pipeline, save_pipeline  # noqa: E402
from .errors import TsflowError  # noqa: E402
from .module import ModuleState, create, fit, load_state, registered_types, save_state, transform  # noqa: E402

__all__ = [
    "ConditionSpec",
    "ConditionalModule",
    "DataSet",
    "ModuleState",
    "Pipeline",
    "Step",
    "SubPipeline",
    "TimeArray",
    "TsflowError",
    "align",
    "as_subpipeline",
    "concat_time",
    "create",
    "estimators",
    "fit",
    "library",
    "load_pipeline",
    "load_state",
    "make_index",
    "registered_types",
    "save_pipeline",
    "save_state",
    "slice_time",
    "transform",
]
