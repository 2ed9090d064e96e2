"""Experiment runners: per-design model comparison and reduced-training protocols."""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from ..classifiers.forest import RandomForest
from ..classifiers.fusion import concat_features
from ..classifiers.logistic import SizeLogisticRegression
from ..consensus import balance_items, canonical_design
from ..nn.estimator import CNNClassifier
from ..nn.network import ARCHITECTURES
from ..pipeline import StudyData, process_study
from ..qif import SQRT_AREA_INDEX, strip_size_features
from ..seeding import sub_seed
from .metrics import auc, confusion_at, roc_points
from .split import split_by_patient

log = logging.getLogger(__name__)

MODELS = ("CNN47", "CNN47+RF", "CNN21", "CNN21+RF", "LM", "RF", "RF_no_size")
REDUCED_MODELS = ("RF", "RF_no_size", "LM")
REDUCED_MODES = ("train80", "train20", "one_plus_one_minus")


def canonical_model(name):
    key = name.strip().upper().replace("-", "_")
    for m in MODELS:
        if m.upper() == key:
            return m
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ModelRow:
    model: str
    auc: float
    acc: float
    sens: float
    spc: float
    roc: list = field(default_factory=list)


@dataclass
class EvalReport:
    design: str
    rows: list
    seed: int
    config_hash: str
    config: dict = field(default_factory=dict)
    n_train: int = 0
    n_validation: int = 0

    @property
    def models(self):
        return [r.model for r in self.rows]

    def row(self, model):
        model = canonical_model(model)
        return next(r for r in self.rows if r.model == model)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rows"] = [ModelRow(**{**r, "roc": [tuple(p) for p in r["roc"]]}) for r in d["rows"]]
        return cls(**d)

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return Path(path)

    @classmethod
    def read_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _score_row(model, scores, labels, threshold):
    acc, sens, spc = confusion_at(scores, labels, threshold)
    return ModelRow(model, auc(scores, labels), acc, sens, spc, roc_points(scores, labels))


def _needed_shapes(models):
    shapes = []
    for m in models:
        if m.startswith("CNN"):
            shape = ARCHITECTURES[m.split("+")[0]]
            if shape not in shapes:
                shapes.append(shape)
    return shapes


def _labels(items):
    return np.array([it.label for it in items], dtype=np.int64)


def run_design(design, models, data, seed=0, threshold=0.5, balance=True, train_fraction=0.8,
               cnn_params=None, n_trees=1000, n_jobs=1, normalization="hu_window"):
    """Train every requested model on one patient-disjoint split and score on the other side.

    ``data`` is a :class:`StudyData` or a study directory. CNN models train on
    patches of their own architecture; ``+RF`` reuses that CNN's penultimate
    activations concatenated with the QIF vector; ``LM`` is logistic regression
    on the square root of the largest cross-sectional area; ``RF`` and
    ``RF_no_size`` are QIF-only forests.
    """
    design = canonical_design(design)
    models = [canonical_model(m) for m in models]
    cnn_params = dict(cnn_params or {})
    if not isinstance(data, StudyData):
        data = process_study(data, _needed_shapes(models), normalization)
    config = dict(design=design, models=models, seed=int(seed), threshold=float(threshold),
                  balance=bool(balance), train_fraction=float(train_fraction), cnn=cnn_params,
                  n_trees=int(n_trees), normalization=data.normalization)

    items = data.cohort(design, balance=False)
    train, val = split_by_patient(items, train_fraction, balance, sub_seed(seed, "split"))
    y_tr, y_val = _labels(train), _labels(val)
    q_tr, q_val = data.features(train), data.features(val)
    forest_seed = sub_seed(seed, "forest")
    log.info("%s: %d train / %d validation items", design, len(train), len(val))

    cnns, rows = {}, []
    for model in models:
        base = model.split("+")[0]
        if base.startswith("CNN") and base not in cnns:
            shape = ARCHITECTURES[base]
            x_tr = data.patchset(train, shape, design).to_array()
            x_val = data.patchset(val, shape, design).to_array()
            est = CNNClassifier(arch=base, random_state=seed, **cnn_params).fit(x_tr, y_tr)
            cnns[base] = (est, x_tr, x_val)
            log.info("trained %s", base)
        if model in ("CNN21", "CNN47"):
            est, _, x_val = cnns[base]
            scores = est.predict_proba(x_val)[:, 1]
        elif model.endswith("+RF"):
            est, x_tr, x_val = cnns[base]
            f_tr = concat_features(est.transform(x_tr), q_tr)
            f_val = concat_features(est.transform(x_val), q_val)
            rf = RandomForest(n_trees, random_state=forest_seed, n_jobs=n_jobs).fit(f_tr, y_tr)
            scores = rf.predict_proba(f_val)[:, 1]
        elif model == "LM":
            lm = SizeLogisticRegression().fit(q_tr[:, SQRT_AREA_INDEX], y_tr)
            scores = lm.predict_proba(q_val[:, SQRT_AREA_INDEX])[:, 1]
        else:
            f_tr, f_val = (q_tr, q_val) if model == "RF" else (strip_size_features(q_tr), strip_size_features(q_val))
            rf = RandomForest(n_trees, random_state=forest_seed, n_jobs=n_jobs).fit(f_tr, y_tr)
            scores = rf.predict_proba(f_val)[:, 1]
        rows.append(_score_row(model, scores, y_val, threshold))
        log.info("%s auc=%.4f", model, rows[-1].auc)
    return EvalReport(design, rows, int(seed), config_hash(config), config, len(train), len(val))


# ------------------------------------------------------------- reduced training


@dataclass
class TrialResult:
    trial: int
    acc: float
    auc: float
    n_train: int
    n_test: int


@dataclass
class ReducedResult:
    design: str
    model: str
    mode: str
    mean_acc: float
    mean_auc: float
    trials: list
    n_features: int
    seed: int


def _model_inputs(model, q):
    if model == "RF":
        return q
    if model == "RF_no_size":
        return strip_size_features(q)
    return q[:, SQRT_AREA_INDEX]


def _fit_score(model, x_tr, y_tr, x_te, forest_seed, n_trees, n_jobs):
    if model == "LM":
        est = SizeLogisticRegression().fit(x_tr, y_tr)
    else:
        est = RandomForest(n_trees, random_state=forest_seed, n_jobs=n_jobs).fit(x_tr, y_tr)
    return est.predict_proba(x_te)[:, 1]


def _evaluate(index, model, x, y, tr, te, forest_seed, threshold, n_trees, n_jobs):
    scores = _fit_score(model, x[tr], y[tr], x[te], forest_seed, n_trees, n_jobs)
    acc = confusion_at(scores, y[te], threshold)[0]
    return TrialResult(index, acc, auc(scores, y[te]), len(tr), len(te))


def _one_plus_one_minus(index, model, x, y, seed, threshold, n_trees):
    trial_seed = sub_seed(seed, "trials") ^ index
    rng = np.random.default_rng(trial_seed)
    pos = rng.choice(np.flatnonzero(y == 1))
    neg = rng.choice(np.flatnonzero(y == 0))
    tr = np.array([pos, neg])
    te = np.setdiff1d(np.arange(len(y)), tr)
    return _evaluate(index, model, x, y, tr, te, sub_seed(seed, "forest") ^ index, threshold, n_trees, 1)


def run_reduced_training(design, model, mode, data, trials=200, seed=0, threshold=0.5,
                         balance=True, n_trees=1000, n_jobs=1):
    """Accuracy of QIF-based models under shrinking training sets.

    ``train80`` / ``train20`` are single patient-disjoint splits at 80% and 20%
    training share. ``one_plus_one_minus`` repeats ``trials`` times: train on one
    random positive and one random negative nodule, test on all the rest.
    Trial ``t`` draws from sub-seed ``trials`` xor ``t``, and results are
    collected in trial order, so parallel runs match serial ones.
    """
    design = canonical_design(design)
    model = canonical_model(model)
    if model not in REDUCED_MODELS:
        raise ValueError(f"reduced training supports {REDUCED_MODELS}, got {model!r}")
    if mode not in REDUCED_MODES:
        raise ValueError(f"mode must be one of {REDUCED_MODES}, got {mode!r}")
    if not isinstance(data, StudyData):
        data = process_study(data)
    items = data.cohort(design, balance=False)
    forest_seed = sub_seed(seed, "forest")

    if mode == "one_plus_one_minus":
        if balance:
            items = balance_items(items, np.random.default_rng(sub_seed(seed, "trials")))
        x, y = _model_inputs(model, data.features(items)), _labels(items)
        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_one_plus_one_minus)(t, model, x, y, seed, threshold, n_trees) for t in range(trials)
        )
    else:
        frac = 0.8 if mode == "train80" else 0.2
        train, val = split_by_patient(items, frac, balance, sub_seed(seed, "split"))
        ordered = train + val
        x, y = _model_inputs(model, data.features(ordered)), _labels(ordered)
        tr, te = np.arange(len(train)), np.arange(len(train), len(ordered))
        results = [_evaluate(0, model, x, y, tr, te, forest_seed, threshold, n_trees, n_jobs)]

    n_features = 1 if x.ndim == 1 else x.shape[1]
    return ReducedResult(
        design, model, mode,
        float(np.mean([r.acc for r in results])), float(np.mean([r.auc for r in results])),
        list(results), n_features, int(seed),
    )
