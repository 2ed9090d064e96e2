import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodulex.classifiers.forest import (
    LEAF,
    ForestModel,
    RandomForest,
    Tree,
    default_mtry,
    forest_bytes,
    forest_proba,
    grow_tree,
    parse_forest,
    read_forest,
    train_forest,
    write_forest,
)
from nodulex.classifiers.fusion import concat_features
from nodulex.classifiers.logistic import (
    LogisticModel,
    SizeLogisticRegression,
    fit_logistic,
    logistic_bytes,
    logistic_proba,
    parse_logistic,
)
from nodulex.errors import BadMagic, LengthMismatch, SingleClassTrainingSet, TruncatedPayload


# --------------------------------------------------------------------- forest


def test_mtry_values():
    assert default_mtry(250) == 15 == math.floor(math.sqrt(250))
    assert default_mtry(50) == 7 and default_mtry(38) == 6 and default_mtry(1) == 1


def test_duplicated_positive_point():
    # both classes are required; the positive point dominates everywhere
    X = np.vstack([np.ones((9, 3)), np.zeros((1, 3))])
    y = np.array([1] * 9 + [0])
    model = train_forest(X, y, n_trees=50, seed=1)
    assert forest_proba(model, np.ones(3)) == 1.0
    with pytest.raises(SingleClassTrainingSet):
        train_forest(np.ones((5, 3)), np.ones(5, int))


def test_xor_fits_training_set():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    model = train_forest(X, y, n_trees=250, seed=0)
    assert np.array_equal(forest_proba(model, X) >= 0.5, y == 1)
    # a depth-2 tree built without bootstrap separates XOR exactly
    tree = grow_tree(X, y, np.random.default_rng(0), mtry=2, bootstrap=False)
    assert np.array_equal(tree.votes_positive()[tree.apply(X)], y == 1)


def stump(feature, thr, left_counts, right_counts):
    return Tree(np.array([feature, LEAF, LEAF], np.int32), np.array([thr, 0, 0], float),
                np.array([1, LEAF, LEAF], np.int32), np.array([2, LEAF, LEAF], np.int32),
                np.array([(0, 0), left_counts, right_counts], np.int64))


def test_hand_built_forest_votes():
    trees = [
        stump(0, 0.5, (3, 0), (0, 2)),   # x0 > 0.5 -> positive
        stump(1, 1.0, (1, 1), (4, 0)),   # left tie -> positive; right negative
        Tree(np.array([LEAF], np.int32), np.zeros(1), np.array([LEAF], np.int32),
             np.array([LEAF], np.int32), np.array([(2, 5)], np.int64)),  # always positive
    ]
    model = ForestModel(2, 1, 0, trees)
    cases = {(0.0, 0.0): 2, (1.0, 0.0): 3, (1.0, 2.0): 2, (0.5, 1.0): 2, (0.0, 5.0): 1}
    for x, votes in cases.items():
        assert forest_proba(model, np.array(x)) == pytest.approx(votes / 3, abs=0)


def test_forest_determinism_and_granularity():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 8))
    y = (X[:, 0] + 0.5 * rng.standard_normal(60) > 0).astype(int)
    a = train_forest(X, y, n_trees=40, seed=9)
    b = train_forest(X, y, n_trees=40, seed=9)
    c = train_forest(X, y, n_trees=40, seed=9, n_jobs=2)
    assert a == b == c
    p = forest_proba(a, rng.standard_normal((30, 8)))
    assert np.allclose(p * 40, np.round(p * 40))
    with pytest.raises(LengthMismatch):
        forest_proba(a, np.zeros(7))


def test_forest_no_worse_than_single_tree():
    for s in range(20):
        rng = np.random.default_rng(s)
        X = rng.standard_normal((40, 5))
        y = (X[:, 0] * X[:, 1] + 0.3 * rng.standard_normal(40) > 0).astype(int)
        if len(set(y)) < 2:
            continue
        model = train_forest(X, y, n_trees=30, seed=s)
        forest_acc = np.mean((forest_proba(model, X) >= 0.5) == y)
        tree_acc = np.mean(model.trees[0].votes_positive()[model.trees[0].apply(X)] == y)
        assert forest_acc >= tree_acc - 0.02


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 6), st.integers(1, 6))
def test_forest_round_trip(seed, n_trees, p):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, p))
    y = np.array([0, 1] * 6)
    model = train_forest(X, y, n_trees=n_trees, seed=seed)
    data = forest_bytes(model)
    again = parse_forest(data)
    assert again == model and forest_bytes(again) == data


def test_forest_file_and_errors(tmp_path):
    model = train_forest(np.arange(8.0)[:, None], np.array([0, 1] * 4), n_trees=3, seed=0)
    write_forest(model, tmp_path / "f.ndxf")
    assert read_forest(tmp_path / "f.ndxf") == model
    data = forest_bytes(model)
    with pytest.raises(BadMagic):
        parse_forest(b"XXXX" + data[4:])
    with pytest.raises(TruncatedPayload):
        parse_forest(data[:-1])


def test_random_forest_estimator():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 4))
    y = (X[:, 0] > 0).astype(int)
    rf = RandomForest(n_trees=25, random_state=2).fit(X, y)
    assert rf.get_params()["n_trees"] == 25
    assert rf.predict_proba(X).shape == (50, 2)
    assert np.mean(rf.predict(X) == y) > 0.9


# ------------------------------------------------------------------- logistic


def test_symmetric_data_zero_intercept():
    x = np.array([-3.0, -2.0, -1.0, 0.5, 1.0, 2.0, 3.0, -0.5])
    y = np.array([0, 0, 1, 0, 1, 1, 1, 0])
    xs = np.concatenate([x, -x])
    ys = np.concatenate([y, 1 - y])
    model = fit_logistic(xs, ys)
    assert model.converged
    assert abs(model.intercept) <= 1e-8


def test_recovers_coefficients_and_monotone_loglik():
    rng = np.random.default_rng(2024)
    x = rng.standard_normal(10000)
    y = (rng.random(10000) < 1 / (1 + np.exp(-(-2.0 + 1.5 * x)))).astype(int)
    model = fit_logistic(x, y)
    assert model.converged
    assert abs(model.intercept + 2.0) <= 0.1 and abs(model.slope - 1.5) <= 0.1
    assert all(b >= a for a, b in zip(model.loglik_trace, model.loglik_trace[1:]))


def test_separation_flagged():
    for x, y in [(np.arange(10.0), [0] * 5 + [1] * 5), (np.array([0.0, 1.0]), [0, 1]),
                 (np.array([1.0, 2.0, 2.0, 3.0]), [0, 0, 1, 1])]:
        model = fit_logistic(x, np.array(y))
        assert not model.converged
        assert np.all(np.diff(model.loglik_trace) >= 0)


def test_logistic_proba():
    m = LogisticModel(-3.0, 1.5, True, 1)
    assert logistic_proba(m, 2.0) == 0.5
    assert logistic_proba(LogisticModel(0.0, 1.0, True, 1), 0.0) == 0.5
    p = logistic_proba(m, np.linspace(-5, 5, 50))
    assert np.all(np.diff(p) > 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.booleans(), st.integers(0, 100))
def test_logistic_round_trip(b0, b1, conv, n):
    model = LogisticModel(b0, b1, conv, n, [])
    data = logistic_bytes(model)
    again = parse_logistic(data)
    assert again == model and logistic_bytes(again) == data


def test_size_logistic_estimator():
    x = np.linspace(0, 10, 40)
    y = (x + np.sin(7 * x) > 5).astype(int)
    est = SizeLogisticRegression().fit(x[:, None], y)
    assert est.coef_[0, 0] > 0
    assert est.predict_proba(x).shape == (40, 2)


# --------------------------------------------------------------------- fusion


def test_concat_features():
    cnn = np.arange(200.0)
    qif = -np.arange(1.0, 51.0)
    v = concat_features(cnn, qif)
    assert v.shape == (250,)
    assert np.array_equal(v[:200], cnn) and np.array_equal(v[200:], qif)
    assert concat_features(np.zeros((3, 200)), np.zeros((3, 50))).shape == (3, 250)
    with pytest.raises(LengthMismatch):
        concat_features(np.zeros(199), qif)
    with pytest.raises(LengthMismatch):
        concat_features(np.zeros((3, 200)), np.zeros((2, 50)))
