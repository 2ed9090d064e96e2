"""Single-predictor logistic regression fitted by IRLS.

The predictor is standardised before fitting and the coefficients are mapped
back to the original scale. Newton steps are halved whenever they would lower
the log-likelihood, so the likelihood trace is non-decreasing.

NDXL layout: b"NDXL" | uint32 version (=1) | uint32 length L | L bytes JSON.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_binary_labels
from ..errors import BadMagic, TruncatedPayload, VersionUnsupported

NDXL_MAGIC = b"NDXL"
NDXL_VERSION = 1
DIVERGENCE_NORM = 1e4


@dataclass
class LogisticModel:
    intercept: float
    slope: float
    converged: bool
    n_iter: int
    loglik_trace: list = field(default_factory=list)

    def __eq__(self, other):
        return (
            isinstance(other, LogisticModel)
            and np.float64(self.intercept).tobytes() == np.float64(other.intercept).tobytes()
            and np.float64(self.slope).tobytes() == np.float64(other.slope).tobytes()
            and (self.converged, self.n_iter) == (other.converged, other.n_iter)
        )


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _separated(x, y):
    """Complete or quasi-complete separation of the two classes along ``x``."""
    x0, x1 = x[y == 0], x[y == 1]
    if x.min() == x.max():
        return False
    return bool(x0.max() <= x1.min() or x1.max() <= x0.min())


def fit_logistic(x, y, max_iter=100, tol=1e-8):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = check_binary_labels(y, len(x)).astype(np.float64)
    mu = x.mean()
    sd = x.std()
    if not sd > 0:
        sd = 1.0
    Z = np.column_stack([np.ones_like(x), (x - mu) / sd])

    ybar = y.mean()
    beta = np.array([np.log(ybar / (1.0 - ybar)), 0.0])
    ll = _loglik(Z @ beta, y)
    trace = [ll]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        p = expit(Z @ beta)
        w = p * (1.0 - p)
        grad = Z.T @ (y - p)
        hess = (Z * w[:, None]).T @ Z
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        for _ in range(60):
            cand = beta + step
            ll_new = _loglik(Z @ cand, y)
            if ll_new >= ll:
                break
            step = step / 2.0
        else:
            break
        change = np.max(np.abs(cand - beta))
        beta, ll = cand, ll_new
        trace.append(ll)
        if np.linalg.norm(beta) > DIVERGENCE_NORM:
            break
        if change < tol:
            converged = True
            break

    if _separated(x, y):
        # the MLE does not exist; IRLS only stalls because the likelihood saturates
        converged = False
    slope = beta[1] / sd
    intercept = beta[0] - beta[1] * mu / sd
    return LogisticModel(float(intercept), float(slope), converged, n_iter, trace)


def logistic_proba(model, x):
    x = np.asarray(x, dtype=np.float64)
    p = expit(model.intercept + model.slope * x)
    return float(p) if p.ndim == 0 else p


def logistic_bytes(model):
    body = json.dumps(
        {"intercept": model.intercept, "slope": model.slope,
         "converged": model.converged, "n_iter": model.n_iter},
        sort_keys=True,
    ).encode("utf-8")
    return NDXL_MAGIC + struct.pack("<II", NDXL_VERSION, len(body)) + body


def parse_logistic(data):
    data = bytes(data)
    if data[:4] != NDXL_MAGIC:
        raise BadMagic(f"expected NDXL magic, got {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedPayload("file ends inside the fixed header")
    version, n = struct.unpack_from("<II", data, 4)
    if version != NDXL_VERSION:
        raise VersionUnsupported(f"NDXL version {version} not supported")
    if len(data) < 12 + n:
        raise TruncatedPayload("JSON body truncated")
    d = json.loads(data[12 : 12 + n].decode("utf-8"))
    return LogisticModel(float(d["intercept"]), float(d["slope"]), bool(d["converged"]), int(d["n_iter"]))


def write_logistic(model, path):
    data = logistic_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def read_logistic(path):
    return parse_logistic(Path(path).read_bytes())


class SizeLogisticRegression(ClassifierMixin, BaseEstimator):
    """Logistic baseline on one scalar column (e.g. sqrt of largest area)."""

    def __init__(self, max_iter=100, tol=1e-8):
        self.max_iter = max_iter
        self.tol = tol

    @staticmethod
    def _column(X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"expected a single feature column, got {X.shape[1]}")
            X = X[:, 0]
        return X

    def fit(self, X, y):
        self.model_ = fit_logistic(self._column(X), y, self.max_iter, self.tol)
        self.coef_ = np.array([[self.model_.slope]])
        self.intercept_ = np.array([self.model_.intercept])
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = 1
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = logistic_proba(self.model_, self._column(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)
