"""Lung-nodule malignancy pipeline on RAWCT studies.

Subpackages cover reader consensus (:mod:`nodulex.consensus`), patch
containers (:mod:`nodulex.patchset`), a from-scratch CNN (:mod:`nodulex.nn`),
radiomics features (:mod:`nodulex.qif`), forest / logistic classifiers
(:mod:`nodulex.classifiers`), experiments (:mod:`nodulex.evaluation`) and
synthetic phantoms (:mod:`nodulex.phantom`).
"""
from .classifiers import RandomForest, SizeLogisticRegression, concat_features
from .consensus import build_cohort, build_consensus, consensus_mask, rasterize_roi
from .errors import DataError, NoduleXError
from .evaluation import auc, confusion_at, export_report, roc_points, run_design, run_reduced_training, split_by_patient
from .ingest import CTVolume, parse_annotations, parse_volume
from .nn.estimator import CNNClassifier
from .nn.network import build_network, extract_cnn_features
from .patchset import PatchSet, extract_patch, read_container, write_container
from .phantom import PhantomConfig, generate_phantom
from .qif import auto_segment, compute_features, strip_size_features

__version__ = "0.1.0"

__all__ = [
    "RandomForest", "SizeLogisticRegression", "concat_features",
    "build_cohort", "build_consensus", "consensus_mask", "rasterize_roi",
    "DataError", "NoduleXError",
    "auc", "confusion_at", "export_report", "roc_points", "run_design", "run_reduced_training", "split_by_patient",
    "CTVolume", "parse_annotations", "parse_volume",
    "CNNClassifier", "build_network", "extract_cnn_features",
    "PatchSet", "extract_patch", "read_container", "write_container",
    "PhantomConfig", "generate_phantom",
    "auto_segment", "compute_features", "strip_size_features",
]
