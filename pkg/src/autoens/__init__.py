"""Single-run checkpoint ensembling driven by an adaptive cyclic
learning-rate schedule, with baseline collectors and diversity diagnostics."""

from .collect import (
    BaselineConfig,
    CheckpointRecord,
    ConvergenceDetector,
    ModelSpec,
    StopPolicy,
    load_checkpoint,
    run_auto_ensemble,
    run_baseline,
    save_checkpoint,
)
from .diversity import DiversityProbe, NormalizationMap, cycle_should_end
from .ensemble import EnsembleSpec, evaluate_ensemble, simple_average, train_combiner, weighted_average
from .harness import Dataset, ExperimentConfig, compare_methods, run_one_method
from .netcore import Batch, Metrics, ModelParams, init_model
from .schedule import ScheduleConfig, ScheduleEvents, ScheduleState, ae_step

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "Batch",
    "CheckpointRecord",
    "ConvergenceDetector",
    "Dataset",
    "DiversityProbe",
    "EnsembleSpec",
    "ExperimentConfig",
    "Metrics",
    "ModelParams",
    "ModelSpec",
    "NormalizationMap",
    "ScheduleConfig",
    "ScheduleEvents",
    "ScheduleState",
    "StopPolicy",
    "__version__",
    "ae_step",
    "compare_methods",
    "cycle_should_end",
    "evaluate_ensemble",
    "init_model",
    "load_checkpoint",
    "run_auto_ensemble",
    "run_baseline",
    "run_one_method",
    "save_checkpoint",
    "simple_average",
    "train_combiner",
    "weighted_average",
]
