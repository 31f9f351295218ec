"""Stratified k-fold cross-validation and exhaustive grid search."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone

from ..exceptions import ClassTooSmall, EmptyGrid

logger = logging.getLogger(__name__)

# automatic tuning grid, in the order the parameters are listed
TUNING_GRID = {
    "hidden_layer_sizes": [(10, 40, 10), (8, 8, 8), (10, 10, 10), (8, 10, 8), (10, 50, 10), (10, 60, 10)],
    "activation": ["tanh", "relu", "logistic", "identity"],
    "solver": ["sgd", "adam"],
    "alpha": [0.0001, 0.001, 0.005],
    "learning_rate": ["constant", "adaptive"],
    "max_iter": [100, 200, 500, 1000, 2000, 5000],
    "momentum": [0.2, 0.5, 0.7, 0.9],
}


def stratified_folds(y, k: int = 10, seed: int = 0) -> list[np.ndarray]:
    """Test-index arrays of ``k`` stratified folds.

    Each class is shuffled and dealt round-robin, starting where the
    previous class stopped, so per-class fold sizes differ by at most one
    and overall fold sizes stay balanced.
    """
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    classes, y_idx = np.unique(y, return_inverse=True)
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c, label in enumerate(classes):
        members = np.flatnonzero(y_idx == c)
        if len(members) < k:
            raise ClassTooSmall(label, len(members), k)
        members = rng.permutation(members)
        for j, i in enumerate(members):
            buckets[(offset + j) % k].append(int(i))
        offset = (offset + len(members)) % k
    return [np.sort(np.array(b, dtype=int)) for b in buckets]


@dataclass
class CVResult:
    classes: np.ndarray
    fold_accuracies: list[float]
    confusion: np.ndarray
    predictions: np.ndarray
    probabilities: np.ndarray
    folds: list[np.ndarray] = field(repr=False)
    n_iters: list[int] = field(default_factory=list)
    true_idx: np.ndarray = field(default=None, repr=False)

    @property
    def accuracy(self) -> float:
        """Pooled accuracy: confusion trace over total."""
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def probability_matrix(self) -> np.ndarray:
        """Mean out-of-fold class probabilities, one row per true class."""
        rows = []
        for c in range(len(self.classes)):
            mask = self.true_idx == c
            rows.append(self.probabilities[mask].mean(axis=0))
        return np.array(rows)


def _fit_fold(estimator, X, y, train, test):
    model = clone(estimator).fit(X[train], y[train])
    proba = model.predict_proba(X[test])
    return proba, model.classes_, getattr(model, "n_iter_", 0)


def cross_validate(estimator, X, y, k: int = 10, seed: int = 0, n_jobs: int = 1) -> CVResult:
    """Stratified k-fold CV; every sample is predicted exactly once."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes, y_idx = np.unique(y, return_inverse=True)
    folds = stratified_folds(y, k, seed)
    all_idx = np.arange(len(y))
    jobs = [(np.setdiff1d(all_idx, test, assume_unique=True), test) for test in folds]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_fit_fold)(estimator, X, y, train, test) for train, test in jobs
    )
    proba_full = np.zeros((len(y), len(classes)))
    fold_acc = []
    n_iters = []
    for (train, test), (proba, model_classes, n_iter) in zip(jobs, results):
        # map the fold model's class order onto the global one
        cols = np.searchsorted(classes, model_classes)
        proba_full[np.ix_(test, cols)] = proba
        pred = np.argmax(proba_full[test], axis=1)
        fold_acc.append(float(np.mean(pred == y_idx[test])))
        n_iters.append(int(n_iter))
    pred_idx = np.argmax(proba_full, axis=1)
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    np.add.at(confusion, (y_idx, pred_idx), 1)
    return CVResult(
        classes=classes,
        fold_accuracies=fold_acc,
        confusion=confusion,
        predictions=classes[pred_idx],
        probabilities=proba_full,
        folds=folds,
        n_iters=n_iters,
        true_idx=y_idx,
    )


def expand_grid(grid) -> list[dict]:
    """Cross product of a ``{param: values}`` mapping (or a list of them), in order."""
    grids = [grid] if isinstance(grid, dict) else list(grid)
    out = []
    for g in grids:
        keys = list(g)
        for values in itertools.product(*(g[k] for k in keys)):
            out.append(dict(zip(keys, values)))
    return out


@dataclass
class GridResult:
    best_params: dict
    best_score: float
    table: list[dict]


def grid_search(estimator, X, y, grid, k: int = 10, seed: int = 0, n_jobs: int = 1) -> GridResult:
    """Score every combination by k-fold CV; ties go to the earliest combination."""
    combos = expand_grid(grid)
    if not combos:
        raise EmptyGrid("parameter grid is empty")
    table = []
    best_i = 0
    for i, params in enumerate(combos):
        cv = cross_validate(clone(estimator).set_params(**params), X, y, k=k, seed=seed, n_jobs=n_jobs)
        table.append({**params, "mean_accuracy": cv.accuracy, "fold_std": float(np.std(cv.fold_accuracies))})
        logger.info("grid %d/%d %s -> %.4f", i + 1, len(combos), params, cv.accuracy)
        if cv.accuracy > table[best_i]["mean_accuracy"]:
            best_i = i
    best = {k_: v for k_, v in table[best_i].items() if k_ not in ("mean_accuracy", "fold_std")}
    return GridResult(best, table[best_i]["mean_accuracy"], table)
