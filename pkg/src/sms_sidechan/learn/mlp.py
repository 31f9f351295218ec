"""Multilayer perceptron classifier trained with mini-batch SGD or Adam.

Binary problems use one logistic output unit, multiclass problems a softmax
layer. The objective is mean cross-entropy plus ``alpha / (2 n)`` times the
squared L2 norm of the weights (biases are not penalized), with ``n`` the
mini-batch size.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import DimensionMismatch, EmptyMatrix, NonFinite, SingleClass
from .preprocessing import Standardizer

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "logistic", "identity")
_EPS = 1e-12


def _logistic(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "logistic":
        return _logistic(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_derivative(name: str, a: np.ndarray) -> np.ndarray:
    """Derivative expressed through the activation output ``a``."""
    if name == "relu":
        return (a > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "logistic":
        return a * (1.0 - a)
    return np.ones_like(a)


def forward(params, X, activation: str, binary: bool):
    """Return the list of layer outputs, input first, probabilities last."""
    acts = [X]
    a = X
    last = len(params) - 1
    for i, (W, b) in enumerate(params):
        z = a @ W + b
        if i < last:
            a = activate(activation, z)
        else:
            a = _logistic(z) if binary else _softmax(z)
        acts.append(a)
    return acts


def loss_and_grads(params, X, Y, activation: str, alpha: float, binary: bool, with_grads: bool = True):
    """Penalized cross-entropy on one batch and its gradients.

    ``Y`` is one-hot (``(n, K)``) for softmax or a column of 0/1 for the
    logistic output.
    """
    n = X.shape[0]
    acts = forward(params, X, activation, binary)
    out = np.clip(acts[-1], _EPS, 1 - _EPS)
    if binary:
        ce = -np.sum(Y * np.log(out) + (1 - Y) * np.log(1 - out)) / n
    else:
        ce = -np.sum(Y * np.log(out)) / n
    l2 = sum(float(np.sum(W * W)) for W, _ in params)
    loss = ce + 0.5 * alpha * l2 / n
    if not with_grads:
        return loss, None
    grads = [None] * len(params)
    # softmax + CE and logistic + log-loss share the same output delta
    delta = (acts[-1] - Y) / n
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        gW = acts[i].T @ delta + (alpha / n) * W
        gb = delta.sum(axis=0)
        grads[i] = (gW, gb)
        if i > 0:
            delta = (delta @ W.T) * activation_derivative(activation, acts[i])
    return loss, grads


def init_params(sizes, activation: str, rng: np.random.Generator):
    """Glorot-uniform weights and biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        factor = 2.0 if activation == "logistic" else 6.0
        bound = np.sqrt(factor / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, (fan_in, fan_out))
        b = rng.uniform(-bound, bound, fan_out)
        params.append((W, b))
    return params


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier over (standardized) timing features.

    Parameters mirror the tuning grid: ``hidden_layer_sizes``,
    ``activation``, ``solver`` (``sgd`` or ``adam``), ``alpha``,
    ``learning_rate`` (``constant`` or ``adaptive``; adaptive divides the step
    by 5 whenever training stalls and only applies to ``sgd``),
    ``max_iter`` (epochs) and ``momentum``. Training stops once the epoch
    loss has failed to improve by ``tol`` for ``n_iter_no_change``
    consecutive epochs.
    """

    def __init__(
        self,
        hidden_layer_sizes=(10, 40, 10),
        activation="relu",
        solver="sgd",
        alpha=0.0001,
        batch_size=32,
        learning_rate="constant",
        learning_rate_init=0.001,
        max_iter=5000,
        momentum=0.9,
        tol=1e-4,
        n_iter_no_change=10,
        standardize=True,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.solver = solver
        self.alpha = alpha
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.learning_rate_init = learning_rate_init
        self.max_iter = max_iter
        self.momentum = momentum
        self.tol = tol
        self.n_iter_no_change = n_iter_no_change
        self.standardize = standardize
        self.random_state = random_state

    def _validate_params(self):
        sizes = tuple(int(h) for h in self.hidden_layer_sizes)
        if any(h < 1 for h in sizes):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.solver not in ("sgd", "adam"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.learning_rate not in ("constant", "adaptive"):
            raise ValueError(f"unknown learning_rate schedule {self.learning_rate!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        return sizes

    def fit(self, X, y):
        sizes = self._validate_params()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyMatrix(f"expected a nonempty 2-D matrix, got shape {X.shape}")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
        classes, y_idx = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise SingleClass("training data contains a single class")
        if X.shape[0] < len(classes):
            raise ValueError("fewer samples than classes")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]

        if self.standardize:
            self.standardizer_ = Standardizer().fit(X)
            X = self.standardizer_.transform(X)
        else:
            self.standardizer_ = None

        binary = len(classes) == 2
        if binary:
            Y = y_idx.reshape(-1, 1).astype(float)
        else:
            Y = np.eye(len(classes))[y_idx]
        rng = np.random.default_rng(self.random_state)
        layer_sizes = (X.shape[1], *sizes, 1 if binary else len(classes))
        params = init_params(layer_sizes, self.activation, rng)
        self._train(params, X, Y, binary, rng)
        self.coefs_ = [W for W, _ in params]
        self.intercepts_ = [b for _, b in params]
        return self

    def _train(self, params, X, Y, binary, rng):
        n = X.shape[0]
        bs = min(self.batch_size, n)
        lr = self.learning_rate_init
        mom = self.momentum
        vel = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        if self.solver == "adam":
            m2 = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
            beta1, beta2, eps = 0.9, 0.999, 1e-8
            t = 0
        best = np.inf
        stall = 0
        curve = []
        for epoch in range(self.max_iter):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                loss, grads = loss_and_grads(params, X[idx], Y[idx], self.activation, self.alpha, binary)
                total += loss * len(idx)
                if self.solver == "sgd":
                    for i, ((W, b), (gW, gb), (vW, vb)) in enumerate(zip(params, grads, vel)):
                        vW *= mom
                        vW -= lr * gW
                        vb *= mom
                        vb -= lr * gb
                        W += vW
                        b += vb
                else:
                    t += 1
                    step = lr * np.sqrt(1 - beta2**t) / (1 - beta1**t)
                    for (W, b), (gW, gb), (mW, mb), (sW, sb) in zip(params, grads, vel, m2):
                        for p, g, m, s in ((W, gW, mW, sW), (b, gb, mb, sb)):
                            m *= beta1
                            m += (1 - beta1) * g
                            s *= beta2
                            s += (1 - beta2) * g * g
                            p -= step * m / (np.sqrt(s) + eps)
            epoch_loss = total / n
            if not np.isfinite(epoch_loss):
                raise NonFinite(f"training loss diverged at epoch {epoch + 1}")
            curve.append(epoch_loss)
            if epoch_loss > best - self.tol:
                stall += 1
            else:
                stall = 0
            best = min(best, epoch_loss)
            if stall > self.n_iter_no_change:
                if self.learning_rate == "adaptive" and self.solver == "sgd" and lr / 5 > 1e-6:
                    lr /= 5
                    stall = 0
                    continue
                break
        self.n_iter_ = len(curve)
        self.loss_ = curve[-1]
        self.loss_curve_ = curve
        logger.debug("trained %d epochs, final loss %.6f", self.n_iter_, self.loss_)

    def _params(self):
        return list(zip(self.coefs_, self.intercepts_))

    def _prepare(self, X):
        check_is_fitted(self, "coefs_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got shape {X.shape}")
        if self.standardizer_ is not None:
            X = self.standardizer_.transform(X)
        return X

    def predict_proba(self, X):
        X = self._prepare(X)
        binary = len(self.classes_) == 2
        out = forward(self._params(), X, self.activation, binary)[-1]
        if binary:
            p = out[:, 0]
            return np.column_stack([1.0 - p, p])
        return out

    def predict(self, X):
        # argmax picks the lowest index on ties
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "coefs_")
        params = self.get_params()
        params["hidden_layer_sizes"] = list(params["hidden_layer_sizes"])
        return {
            "format": "sms-sidechan-mlp",
            "version": 1,
            "spec": params,
            "classes": [c.item() if hasattr(c, "item") else c for c in self.classes_],
            "n_features": int(self.n_features_in_),
            "standardizer": None if self.standardizer_ is None else {
                "mean": self.standardizer_.mean_.tolist(),
                "scale": self.standardizer_.scale_.tolist(),
            },
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in self._params()
            ],
            "n_iter": int(self.n_iter_),
            "final_loss": float(self.loss_),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> MLPClassifier:
        if obj.get("format") != "sms-sidechan-mlp":
            raise ValueError("not a serialized MLP model")
        if obj.get("version") != 1:
            raise ValueError(f"unsupported model version {obj.get('version')}")
        spec = dict(obj["spec"])
        spec["hidden_layer_sizes"] = tuple(spec["hidden_layer_sizes"])
        model = cls(**spec)
        model.classes_ = np.array(obj["classes"], dtype=object)
        model.n_features_in_ = obj["n_features"]
        if obj["standardizer"] is None:
            model.standardizer_ = None
        else:
            st = Standardizer()
            st.mean_ = np.array(obj["standardizer"]["mean"])
            st.scale_ = np.array(obj["standardizer"]["scale"])
            st.n_features_in_ = len(st.mean_)
            model.standardizer_ = st
        model.coefs_ = [np.array(l["weights"]).reshape(l["shape"]) for l in obj["layers"]]
        model.intercepts_ = [np.array(l["bias"]) for l in obj["layers"]]
        model.n_iter_ = obj.get("n_iter", 0)
        model.loss_ = obj.get("final_loss", float("nan"))
        return model
