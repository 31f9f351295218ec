import math

import numpy as np
import pytest
from sklearn.base import clone

from sms_sidechan.exceptions import (
    ClassTooSmall, DimensionMismatch, EmptyGrid, EmptyMatrix, EmptyTraining, SingleClass,
)
from sms_sidechan.learn import (
    TUNING_GRID, IsolationForest, MLPClassifier, Standardizer, cross_validate,
    expand_grid, grid_search, stratified_folds,
)
from sms_sidechan.learn.iforest import average_path_length, build_tree
from sms_sidechan.learn.mlp import activate, forward, init_params

from .gradcheck import max_relative_error, network


def fast_mlp(**kw):
    base = dict(hidden_layer_sizes=(8,), solver="adam", learning_rate_init=0.01, max_iter=200, random_state=0)
    base.update(kw)
    return MLPClassifier(**base)


def blobs(n=200, gap=6.0, seed=0, classes=2, dim=6):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(loc=c * gap, size=(n, dim)) for c in range(classes)])
    y = np.repeat([f"c{c}" for c in range(classes)], n)
    return X, y


# -- standardizer --------------------------------------------------------------

def test_standardizer_two_point_column():
    Z = Standardizer().fit_transform(np.array([[1.0], [3.0]]))
    assert Z.ravel().tolist() == [-1.0, 1.0]


def test_standardizer_constant_column_passes_through():
    X = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
    Z = Standardizer().fit_transform(X)
    assert np.array_equal(Z[:, 0], X[:, 0])


def test_standardizer_moments_against_fsum():
    X = np.random.default_rng(4).normal(loc=300, scale=40, size=(1000, 6))
    Z = Standardizer().fit_transform(X)
    for j in range(6):
        col = Z[:, j].tolist()
        mu = math.fsum(col) / len(col)
        sd = math.sqrt(math.fsum((v - mu) ** 2 for v in col) / len(col))
        assert abs(mu) < 1e-12
        assert abs(sd - 1) < 1e-12


def test_standardizer_inverse_and_errors():
    X = np.random.default_rng(1).normal(size=(20, 3))
    s = Standardizer().fit(X)
    assert np.allclose(s.inverse_transform(s.transform(X)), X)
    with pytest.raises(DimensionMismatch):
        s.transform(np.zeros((2, 4)))
    with pytest.raises(EmptyMatrix):
        Standardizer().fit(np.zeros((0, 3)))


# -- MLP -------------------------------------------------------------------------

def test_output_activations():
    assert activate("logistic", np.array([0.0]))[0] == 0.5
    params = init_params((6, 5, 4), "tanh", np.random.default_rng(0))
    out = forward(params, np.random.default_rng(1).normal(size=(30, 6)), "tanh", binary=False)[-1]
    assert np.allclose(out.sum(axis=1), 1.0)


@pytest.mark.parametrize("activation", ["tanh", "relu", "logistic", "identity"])
@pytest.mark.parametrize("n_classes", [2, 3])
def test_gradients_match_finite_differences(activation, n_classes):
    params, X, Y, binary = network(n_classes, activation, seed=2, n=16, hidden=(5, 7, 5))
    assert max_relative_error(params, X, Y, activation, 1e-3, binary) < 1e-4


def test_separable_blobs_are_learned():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.5, size=(100, 6)), rng.normal(3, 0.5, size=(100, 6))])
    y = np.repeat(["neg", "pos"], 100)
    m = MLPClassifier(random_state=0).fit(X, y)
    assert np.mean(m.predict(X) == y) >= 0.99
    assert m.n_iter_ < m.max_iter  # stopped early on the loss plateau


def test_identical_inputs_give_chance():
    X = np.ones((200, 6))
    y = np.repeat(["a", "b"], 100)
    cv = cross_validate(fast_mlp(), X, y, k=5)
    assert abs(cv.accuracy - 0.5) <= 0.1


def test_multiclass_probabilities():
    X, y = blobs(n=60, classes=3)
    m = fast_mlp().fit(X, y)
    p = m.predict_proba(X)
    assert p.shape == (180, 3)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.mean(m.predict(X) == y) > 0.95


def test_mlp_input_errors():
    X, y = blobs(n=20)
    with pytest.raises(SingleClass):
        fast_mlp().fit(X, np.repeat("a", len(y)))
    with pytest.raises(DimensionMismatch):
        fast_mlp().fit(X, y[:-1])
    with pytest.raises(EmptyMatrix):
        fast_mlp().fit(np.zeros((0, 6)), [])
    m = fast_mlp().fit(X, y)
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        fast_mlp(activation="softplus").fit(X, y)


def test_mlp_deterministic_and_serializable():
    X, y = blobs(n=40)
    a = fast_mlp(random_state=7).fit(X, y)
    b = fast_mlp(random_state=7).fit(X, y)
    assert all(np.array_equal(u, v) for u, v in zip(a.coefs_, b.coefs_))
    c = MLPClassifier.from_dict(a.to_dict())
    assert np.array_equal(c.predict_proba(X), a.predict_proba(X))
    assert c.get_params() == a.get_params()


def test_standardized_mlp_is_scale_invariant():
    X, y = blobs(n=40)
    a = fast_mlp().fit(X, y)
    b = fast_mlp().fit(X * 1000.0 + 50.0, y)
    assert np.allclose(a.predict_proba(X), b.predict_proba(X * 1000.0 + 50.0), atol=1e-6)


def test_sgd_adaptive_runs_and_records_curve():
    X, y = blobs(n=40)
    m = fast_mlp(solver="sgd", learning_rate="adaptive", learning_rate_init=0.05, max_iter=50).fit(X, y)
    assert m.n_iter_ == len(m.loss_curve_) <= 50
    assert m.loss_curve_[-1] < m.loss_curve_[0]


def test_clone_keeps_params():
    m = fast_mlp(alpha=0.005)
    assert clone(m).get_params() == m.get_params()


# -- folds and search ------------------------------------------------------------

def test_folds_partition_and_balance():
    y = np.array(["a"] * 37 + ["b"] * 63)
    folds = stratified_folds(y, 10, seed=3)
    assert [len(f) for f in folds] == [10] * 10
    joined = np.concatenate(folds)
    assert sorted(joined.tolist()) == list(range(100))
    for label in ("a", "b"):
        counts = [int(np.sum(y[f] == label)) for f in folds]
        assert max(counts) - min(counts) <= 1


def test_fold_class_too_small():
    with pytest.raises(ClassTooSmall):
        stratified_folds(["a"] * 20 + ["b"] * 9, 10)


def test_perfect_feature_is_fully_accurate():
    y = np.repeat(["x", "y"], 50)
    X = np.column_stack([(y == "y").astype(float), np.zeros(100)])
    cv = cross_validate(fast_mlp(), X, y, k=10)
    assert cv.accuracy == 1.0
    assert np.trace(cv.confusion) / cv.confusion.sum() == cv.accuracy
    assert len(cv.fold_accuracies) == 10


def test_full_tuning_grid_size():
    assert len(expand_grid(TUNING_GRID)) == 6 * 4 * 2 * 3 * 2 * 6 * 4 == 6912


def test_grid_search():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(300, 2))
    y = np.where((X[:, 0] > 0) ^ (X[:, 1] > 0), "odd", "even")
    est = fast_mlp(hidden_layer_sizes=(16, 16), max_iter=300)
    res = grid_search(est, X, y, {"activation": ["identity", "relu"]}, k=3)
    assert res.best_params == {"activation": "relu"}
    scores = {row["activation"]: row["mean_accuracy"] for row in res.table}
    assert scores["relu"] > 0.9 > 0.7 > scores["identity"]
    single = grid_search(est, X, y, {"alpha": [0.001]}, k=3)
    assert single.best_params == {"alpha": 0.001}
    with pytest.raises(EmptyGrid):
        grid_search(est, X, y, {"alpha": []}, k=3)


# -- isolation forest ---------------------------------------------------------------

def test_average_path_length_values():
    assert average_path_length(1) == 0.0
    assert average_path_length(2) == 1.0
    assert average_path_length(3) == pytest.approx(2 * 1.5 - 4 / 3)


def _brute_path(tree, x, node=0):
    if tree.left[node] == -1:
        return average_path_length(int(tree.size[node]))
    child = tree.left[node] if x[tree.feature[node]] < tree.threshold[node] else tree.right[node]
    return 1 + _brute_path(tree, x, child)


def test_path_lengths_match_recursive_walk():
    X = np.random.default_rng(0).normal(size=(300, 4))
    forest = IsolationForest(n_estimators=2, max_samples=64, standardize=False, random_state=1).fit(X)
    Q = np.random.default_rng(5).normal(size=(50, 4)) * 2
    for tree in forest.estimators_:
        expected = [_brute_path(tree, q) for q in Q]
        assert np.allclose(tree.path_lengths(Q), expected)
        assert tree.max_depth <= math.ceil(math.log2(64))
    h = forest.mean_path_length(Q)
    s = forest.score_samples(Q)
    assert np.allclose(s, 2.0 ** (-h / average_path_length(64)))
    order = np.argsort(h)
    assert np.all(np.diff(s[order]) <= 0)


def test_duplicate_points_score_half():
    X = np.tile([[1.0, 2.0, 3.0]], (256, 1))
    forest = IsolationForest(n_estimators=10, max_samples=256).fit(X)
    # identical points cannot be split, so every tree is a single leaf of size psi
    assert all(len(t.size) == 1 for t in forest.estimators_)
    assert np.allclose(forest.mean_path_length(X[:1]), average_path_length(256))
    assert np.allclose(forest.score_samples(X[:1]), 0.5)


def test_far_point_ranks_highest():
    X = np.random.default_rng(0).normal(size=(500, 6))
    forest = IsolationForest(random_state=3).fit(X)
    Q = np.vstack([X[:50], np.full((1, 6), 8.0)])
    s = forest.score_samples(Q)
    assert int(np.argmax(s)) == 50
    assert forest.predict(Q)[-1] == -1
    assert forest.flag(Q)[-1] == "anomaly"


def test_forest_errors_and_tree_depth():
    with pytest.raises(EmptyTraining):
        IsolationForest().fit(np.zeros((0, 3)))
    X = np.random.default_rng(0).normal(size=(100, 3))
    tree = build_tree(X, 3, np.random.default_rng(0))
    assert tree.max_depth <= 3
    assert tree.size[0] == 100
    forest = IsolationForest(n_estimators=5).fit(X)
    with pytest.raises(DimensionMismatch):
        forest.score_samples(np.zeros((2, 2)))
