from .forest import ForestModel, RandomForest, default_mtry, forest_proba, train_forest
from .fusion import concat_features
from .logistic import LogisticModel, SizeLogisticRegression, fit_logistic, logistic_proba

__all__ = [
    "ForestModel", "RandomForest", "default_mtry", "forest_proba", "train_forest",
    "concat_features", "LogisticModel", "SizeLogisticRegression", "fit_logistic", "logistic_proba",
]
