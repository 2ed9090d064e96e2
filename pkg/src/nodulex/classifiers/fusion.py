import numpy as np

from ..errors import LengthMismatch

N_CNN_FEATURES = 200
N_QIF_FEATURES = 50


def concat_features(cnn, qif, n_cnn=N_CNN_FEATURES, n_qif=N_QIF_FEATURES):
    """CNN features first, QIF after; accepts single vectors or row-matched matrices."""
    cnn = np.asarray(cnn, dtype=np.float64)
    qif = np.asarray(qif, dtype=np.float64)
    if cnn.shape[-1] != n_cnn or qif.shape[-1] != n_qif:
        raise LengthMismatch(f"expected {n_cnn} CNN + {n_qif} QIF features, got {cnn.shape[-1]} + {qif.shape[-1]}")
    if cnn.ndim != qif.ndim or cnn.shape[:-1] != qif.shape[:-1]:
        raise LengthMismatch(f"row mismatch between CNN {cnn.shape} and QIF {qif.shape}")
    return np.concatenate([cnn, qif], axis=-1)
