"""Central finite-difference oracle for the MLP objective.

The oracle re-implements the penalized cross-entropy in extended precision
(``np.longdouble``) without touching the package's forward pass, so it is
independent of the backprop path and its rounding error stays far below the
gradients it checks.
"""

import numpy as np

from sms_sidechan.learn.mlp import init_params, loss_and_grads

LD = np.longdouble


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    if name == "logistic":
        return 1 / (1 + np.exp(-z))
    return z


def reference_loss(params, X, Y, activation, alpha, binary):
    a = X.astype(LD)
    Y = Y.astype(LD)
    for i, (W, b) in enumerate(params):
        z = a @ W.astype(LD) + b.astype(LD)
        if i < len(params) - 1:
            a = _act(activation, z)
        elif binary:
            a = 1 / (1 + np.exp(-z))
        else:
            e = np.exp(z - z.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
    n = X.shape[0]
    if binary:
        ce = -np.sum(Y * np.log(a) + (1 - Y) * np.log(1 - a)) / n
    else:
        ce = -np.sum(Y * np.log(a)) / n
    l2 = sum(np.sum(W.astype(LD) ** 2) for W, _ in params)
    return ce + LD(alpha) * l2 / (2 * n)


def network(n_classes=3, activation="relu", seed=0, n=32, hidden=(10, 40, 10)):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 6))
    binary = n_classes == 2
    y = rng.integers(0, n_classes, n)
    Y = y.reshape(-1, 1).astype(float) if binary else np.eye(n_classes)[y]
    params = init_params((6, *hidden, 1 if binary else n_classes), activation, rng)
    return params, X, Y, binary


def max_relative_error(params, X, Y, activation, alpha, binary, eps=1e-5):
    """Largest elementwise |analytic - numeric| / max(|analytic|, |numeric|)."""
    _, grads = loss_and_grads(params, X, Y, activation, alpha, binary)
    worst = 0.0
    for (W, b), (gW, gb) in zip(params, grads):
        for p, g in ((W, gW), (b, gb)):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = reference_loss(params, X, Y, activation, alpha, binary)
                flat[i] = orig - eps
                down = reference_loss(params, X, Y, activation, alpha, binary)
                flat[i] = orig
                # the perturbation actually applied, after rounding to float64
                step = LD(orig + eps) - LD(orig - eps)
                numeric = float((up - down) / step)
                denom = max(abs(numeric), abs(gflat[i]), 1e-300)
                worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
