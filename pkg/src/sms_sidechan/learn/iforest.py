"""Isolation Forest for open-world detection.

Trained on signatures of known locations only; points that isolate in few
random splits score close to 1 and are flagged as coming from an unseen
location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DimensionMismatch, EmptyTraining
from .preprocessing import Standardizer

EULER_GAMMA = 0.5772156649015329


def harmonic(n: int) -> float:
    if n < 1:
        return 0.0
    if n <= 1000:
        return math.fsum(1.0 / i for i in range(1, n + 1))
    return math.log(n) + EULER_GAMMA + 1 / (2 * n) - 1 / (12 * n * n)


def average_path_length(n: int) -> float:
    """c(n): mean depth of an unsuccessful BST search among ``n`` points."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class IsolationTree:
    """Flat node arrays; ``left == -1`` marks a leaf holding ``size`` points."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.left[node] != -1
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.left[node] != -1
        return self.depth[node] + np.array([average_path_length(int(s)) for s in self.size[node]])


def build_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, d):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(size) - 1

    stack = [(np.arange(len(X)), 0, new_node(len(X), 0))]
    while stack:
        rows, d, node = stack.pop()
        if d >= height_limit or len(rows) <= 1:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            continue
        q = int(splittable[rng.integers(len(splittable))])
        p = rng.uniform(lo[q], hi[q])
        if p <= lo[q]:
            p = np.nextafter(lo[q], hi[q])
        mask = sub[:, q] < p
        feature[node] = q
        threshold[node] = p
        li = new_node(int(mask.sum()), d + 1)
        ri = new_node(int((~mask).sum()), d + 1)
        left[node] = li
        right[node] = ri
        stack.append((rows[~mask], d + 1, ri))
        stack.append((rows[mask], d + 1, li))
    return IsolationTree(
        np.array(feature), np.array(threshold, dtype=float), np.array(left),
        np.array(right), np.array(size), np.array(depth),
    )


class IsolationForest(OutlierMixin, BaseEstimator):
    """Ensemble of random isolation trees over standardized features.

    ``score_samples`` returns ``2 ** (-mean_path / c(subsample))`` in (0, 1);
    ``predict`` gives -1 for scores above ``threshold`` and +1 otherwise.
    """

    def __init__(self, n_estimators=100, max_samples=256, threshold=0.5, standardize=True, random_state=0):
        self.n_estimators = n_estimators
        self.max_samples = max_samples
        self.threshold = threshold
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyTraining("isolation forest needs a nonempty training matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("training matrix contains non-finite values")
        self.n_features_in_ = X.shape[1]
        if self.standardize:
            self.standardizer_ = Standardizer().fit(X)
            X = self.standardizer_.transform(X)
        else:
            self.standardizer_ = None
        rng = np.random.default_rng(self.random_state)
        psi = min(int(self.max_samples), X.shape[0])
        self.subsample_ = psi
        self.height_limit_ = max(0, math.ceil(math.log2(psi))) if psi > 1 else 0
        self.estimators_ = []
        for _ in range(self.n_estimators):
            rows = rng.choice(X.shape[0], size=psi, replace=False)
            self.estimators_.append(build_tree(X[rows], self.height_limit_, rng))
        return self

    def _prepare(self, X):
        check_is_fitted(self, "estimators_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return self.standardizer_.transform(X) if self.standardizer_ is not None else X

    def mean_path_length(self, X) -> np.ndarray:
        X = self._prepare(X)
        return np.mean([t.path_lengths(X) for t in self.estimators_], axis=0)

    def score_samples(self, X) -> np.ndarray:
        c = average_path_length(self.subsample_)
        h = self.mean_path_length(X)
        if c == 0:
            return np.full(len(h), 0.5)
        return 2.0 ** (-h / c)

    def predict(self, X) -> np.ndarray:
        return np.where(self.score_samples(X) > self.threshold, -1, 1)

    def flag(self, X) -> np.ndarray:
        """``"anomaly"`` or ``"inlier"`` per row."""
        return np.where(self.score_samples(X) > self.threshold, "anomaly", "inlier")
