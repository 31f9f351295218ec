from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import DimensionMismatch, EmptyMatrix


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyMatrix(f"expected a nonempty 2-D matrix, got shape {X.shape}")
    return check_array(X, dtype=np.float64)


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-column z-scoring fitted on training data.

    Zero-variance columns get mean 0 and scale 1, so they pass through
    unchanged.
    """

    def fit(self, X, y=None):
        X = _as_matrix(X)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale == 0
        mean[constant] = 0.0
        scale[constant] = 1.0
        self.mean_ = mean
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X, dtype=float) * self.scale_ + self.mean_
