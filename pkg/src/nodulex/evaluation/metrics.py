"""Rank-based AUC, ROC points and thresholded confusion metrics."""
import numpy as np
from scipy.stats import rankdata

from ..errors import SingleClass


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(bool)
    if labels.all() or not labels.any():
        raise SingleClass("both classes must be present")
    return scores, labels


def auc(scores, labels):
    """Mann-Whitney AUC: P(s+ > s-) + 0.5 P(s+ == s-)."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores)  # average ranks: half-integers, exact in float64
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels):
    """``(fpr, tpr)`` for thresholds at each distinct score, high to low, from (0, 0)."""
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (~y).sum()]
    return list(zip(fpr.tolist(), tpr.tolist()))


def trapezoid_area(points):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def confusion_at(scores, labels, threshold=0.5):
    """``(acc, sens, spc)`` predicting positive iff ``score >= threshold``."""
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    tn = int(np.sum(~pred & ~labels))
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    return (tp + tn) / len(labels), tp / n_pos, tn / n_neg


def accuracy_at(scores, labels, threshold=0.5):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    return float(np.mean((scores >= threshold) == (labels == 1)))
