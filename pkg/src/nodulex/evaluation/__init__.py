from .experiments import (
    MODELS,
    EvalReport,
    ModelRow,
    ReducedResult,
    TrialResult,
    canonical_model,
    run_design,
    run_reduced_training,
)
from .metrics import auc, confusion_at, roc_points, trapezoid_area
from .report import export_report
from .split import split_by_patient

__all__ = [
    "MODELS", "EvalReport", "ModelRow", "ReducedResult", "TrialResult", "canonical_model",
    "run_design", "run_reduced_training", "auc", "confusion_at", "roc_points",
    "trapezoid_area", "export_report", "split_by_patient",
]
