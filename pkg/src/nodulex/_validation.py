"""Input validation helpers shared by the estimators."""
import numpy as np
from sklearn.utils.validation import check_array

from .errors import LengthMismatch, ShapeMismatch, SingleClassTrainingSet


def check_patches(X, input_shape):
    """Coerce patches to a float64 ``(N, D, H, W)`` array of the given (W, H, D)."""
    if hasattr(X, "to_array"):
        X = X.to_array()
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_min_samples=0)
    w, h, d = input_shape
    if X.ndim != 4 or X.shape[1:] != (d, h, w):
        raise ShapeMismatch(f"expected patches of shape (N, {d}, {h}, {w}), got {X.shape}")
    return X


def check_binary_labels(y, n=None, require_both=True):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeMismatch(f"labels must be 1-D, got shape {y.shape}")
    if n is not None and len(y) != n:
        raise LengthMismatch(f"{len(y)} labels for {n} samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.int64)
    if require_both and (len(y) < 2 or len(np.unique(y)) < 2):
        raise SingleClassTrainingSet("training data must contain both classes")
    return y


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_min_samples=0)
    if n_features is not None and X.shape[1] != n_features:
        raise LengthMismatch(f"expected {n_features} features, got {X.shape[1]}")
    return X
