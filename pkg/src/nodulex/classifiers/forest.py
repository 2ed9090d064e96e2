"""Random forest of unpruned Gini trees over bootstrap samples.

Each tree ``t`` draws from its own generator seeded with ``seed ^ t`` so the
forest is identical whether trees are grown serially or on worker threads.
At each node ``mtry = floor(sqrt(p))`` features are tried; if every sampled
feature is constant on the node, further features are drawn (without
replacement) until a splittable one is found or all are exhausted.

NDXF layout::

    b"NDXF" | uint32 version (=1) | uint32 header length H | H bytes JSON
    {n_trees, n_features, mtry, seed, node_counts: [...]}
    | int32 feature[N] | float64 threshold[N] | int32 left[N] | int32 right[N]
    | int64 counts[N, 2]        (all little-endian; child indices tree-local)
"""
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_binary_labels, check_features
from ..errors import BadMagic, LengthMismatch, TruncatedPayload, VersionUnsupported

NDXF_MAGIC = b"NDXF"
NDXF_VERSION = 1
LEAF = -1


def default_mtry(n_features):
    return max(1, int(math.isqrt(int(n_features))))


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # int32, LEAF for leaves
    threshold: np.ndarray  # float64; go left when x <= threshold
    left: np.ndarray  # int32 tree-local child index
    right: np.ndarray
    counts: np.ndarray  # int64 (n_nodes, 2) class counts of bootstrap rows

    @property
    def n_nodes(self):
        return len(self.feature)

    def votes_positive(self):
        """Per-node vote; class ties go to the positive class."""
        return self.counts[:, 1] >= self.counts[:, 0]

    def apply(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f != LEAF
            if not inner.any():
                return node
            n, r = node[inner], rows[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "counts"))


def _best_split(Xn, yn, feats):
    """Best Gini split among ``feats`` for rows ``Xn``; None if all constant."""
    m = len(yn)
    vals = Xn[:, feats]
    order = np.argsort(vals, axis=0, kind="stable")
    v = np.take_along_axis(vals, order, axis=0)
    ysort = yn[order]
    valid = v[1:] > v[:-1]
    if not valid.any():
        return None
    pos_left = np.cumsum(ysort, axis=0)[:-1].astype(np.float64)
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    pos_right = ysort.sum(axis=0)[None, :] - pos_left
    pl, pr = pos_left / n_left, pos_right / n_right
    impurity = n_left * 2.0 * pl * (1.0 - pl) + n_right * 2.0 * pr * (1.0 - pr)
    impurity = np.where(valid, impurity, np.inf)
    flat = int(np.argmin(impurity.T.ravel()))
    j, i = divmod(flat, m - 1)
    lo, hi = v[i, j], v[i + 1, j]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr)


def grow_tree(X, y, rng, mtry, bootstrap=True):
    n, p = X.shape
    rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(c0, c1):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append((c0, c1))
        return len(feature) - 1

    yr = y[rows]
    c1 = int(yr.sum())
    stack = [(new_node(len(rows) - c1, c1), rows)]
    while stack:
        node, idx = stack.pop()
        c0, c1 = counts[node]
        if c0 == 0 or c1 == 0:
            continue
        Xn, yn = X[idx], y[idx]
        perm = rng.permutation(p)
        split = None
        for s in range(0, p, mtry):
            split = _best_split(Xn, yn, perm[s : s + mtry])
            if split is not None:
                break
        if split is None:
            continue
        f, thr = split
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        l1, r1 = int(y[li].sum()), int(y[ri].sum())
        feature[node], threshold[node] = f, thr
        left[node] = new_node(len(li) - l1, l1)
        right[node] = new_node(len(ri) - r1, r1)
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(counts, dtype=np.int64).reshape(-1, 2),
    )


@dataclass(eq=False)
class ForestModel:
    n_features: int
    mtry: int
    seed: int
    trees: list = field(default_factory=list)

    @property
    def n_trees(self):
        return len(self.trees)

    @cached_property
    def _flat(self):
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])[:-1]
        feature = np.concatenate([t.feature for t in self.trees]).astype(np.int64)
        thr = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([t.left.astype(np.int64) + o for t, o in zip(self.trees, offsets)])
        right = np.concatenate([t.right.astype(np.int64) + o for t, o in zip(self.trees, offsets)])
        vote = np.concatenate([t.votes_positive() for t in self.trees])
        return offsets, feature, thr, left, right, vote

    def votes(self, X):
        """Boolean ``(n_samples, n_trees)`` matrix of positive votes."""
        offsets, feature, thr, left, right, vote = self._flat
        n = len(X)
        node = np.tile(offsets, (n, 1)).ravel()
        row = np.repeat(np.arange(n), len(offsets))
        active = np.flatnonzero(feature[node] != LEAF)
        while len(active):
            nd = node[active]
            go_left = X[row[active], feature[nd]] <= thr[nd]
            node[active] = np.where(go_left, left[nd], right[nd])
            active = active[feature[node[active]] != LEAF]
        return vote[node].reshape(n, len(offsets))

    def __eq__(self, other):
        return (
            isinstance(other, ForestModel)
            and (self.n_features, self.mtry, self.seed) == (other.n_features, other.mtry, other.seed)
            and len(self.trees) == len(other.trees)
            and all(a == b for a, b in zip(self.trees, other.trees))
        )


def train_forest(X, y, n_trees=1000, seed=0, mtry=None, n_jobs=1):
    X = check_features(X)
    y = check_binary_labels(y, len(X))
    p = X.shape[1]
    mtry = default_mtry(p) if mtry is None else int(mtry)
    seed = int(seed)
    if n_jobs == 1:
        trees = [grow_tree(X, y, np.random.default_rng(seed ^ t), mtry) for t in range(n_trees)]
    else:
        trees = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(grow_tree)(X, y, np.random.default_rng(seed ^ t), mtry) for t in range(n_trees)
        )
    return ForestModel(p, mtry, seed, trees)


def forest_proba(model, x):
    """Fraction of trees voting positive, for one sample or a matrix of samples."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise LengthMismatch(f"forest expects {model.n_features} features, got {X.shape[-1]}")
    p = model.votes(X).mean(axis=1)
    return float(p[0]) if single else p


# ---------------------------------------------------------------- NDXF io


def forest_bytes(model):
    header = {
        "n_trees": model.n_trees,
        "n_features": model.n_features,
        "mtry": model.mtry,
        "seed": model.seed,
        "node_counts": [t.n_nodes for t in model.trees],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    cat = (lambda k, dt: np.concatenate([getattr(t, k) for t in model.trees]).astype(dt).tobytes()
           if model.trees else b"")
    payload = (cat("feature", "<i4") + cat("threshold", "<f8") + cat("left", "<i4")
               + cat("right", "<i4") + cat("counts", "<i8"))
    return NDXF_MAGIC + struct.pack("<II", NDXF_VERSION, len(hbytes)) + hbytes + payload


def parse_forest(data):
    data = bytes(data)
    if data[:4] != NDXF_MAGIC:
        raise BadMagic(f"expected NDXF magic, got {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedPayload("file ends inside the fixed header")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != NDXF_VERSION:
        raise VersionUnsupported(f"NDXF version {version} not supported")
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    sizes = header["node_counts"]
    total = int(sum(sizes))
    need = total * (4 + 8 + 4 + 4 + 16)
    payload = data[12 + hlen :]
    if len(payload) < need:
        raise TruncatedPayload(f"node arrays need {need} bytes, found {len(payload)}")
    off = 0
    arrays = {}
    for name, dt, width in (("feature", "<i4", 1), ("threshold", "<f8", 1), ("left", "<i4", 1),
                            ("right", "<i4", 1), ("counts", "<i8", 2)):
        nbytes = total * width * np.dtype(dt).itemsize
        arrays[name] = np.frombuffer(payload[off : off + nbytes], dtype=dt).reshape(total, width)
        off += nbytes
    bounds = np.cumsum([0] + sizes)
    trees = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        trees.append(Tree(
            arrays["feature"][a:b, 0].astype(np.int32),
            arrays["threshold"][a:b, 0].astype(np.float64),
            arrays["left"][a:b, 0].astype(np.int32),
            arrays["right"][a:b, 0].astype(np.int32),
            arrays["counts"][a:b].astype(np.int64),
        ))
    return ForestModel(header["n_features"], header["mtry"], header["seed"], trees)


def write_forest(model, path):
    data = forest_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def read_forest(path):
    return parse_forest(Path(path).read_bytes())


class RandomForest(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`train_forest` / :func:`forest_proba`."""

    def __init__(self, n_trees=1000, mtry=None, random_state=0, n_jobs=1):
        self.n_trees = n_trees
        self.mtry = mtry
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        self.model_ = train_forest(X, y, self.n_trees, self.random_state, self.mtry, self.n_jobs)
        self.n_features_in_ = self.model_.n_features
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_features(X, self.n_features_in_)
        p = forest_proba(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)
