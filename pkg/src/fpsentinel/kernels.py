"""Hot numeric kernels for logistic-regression training and inference.

Each kernel has a single numpy body; by default it is compiled with numba's
@njit, with the uncompiled body kept as a pure-numpy fallback.  Selection is
controlled by the FP_SENTINEL_NUMBA environment variable ("0" disables the
JIT) or by a missing numba installation.  All randomness (shuffles, noise)
is generated by callers with numpy Generators and passed in as arrays, so
both paths are deterministic given the same inputs.

``python -m fpsentinel.bench`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("FP_SENTINEL_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


USE_NUMBA = _WANT_NUMBA and HAVE_NUMBA


def _sigmoid_scores_impl(X, w, b):
    z = np.dot(X, w) + b
    z = np.minimum(np.maximum(z, -500.0), 500.0)
    return 1.0 / (1.0 + np.exp(-z))


def _logistic_grad_impl(X, y, w, b):
    # Mean cross-entropy gradient over the batch.
    n = X.shape[0]
    p = _sigmoid_scores_impl(X, w, b)
    r = p - y
    grad_w = np.dot(r, X) / n
    grad_b = np.sum(r) / n
    return grad_w, grad_b


def _sgd_epochs_impl(X, y, w, b, perms, lr, batch_size):
    # perms: (epochs, n) int64 permutation matrix drawn by the caller.
    n = X.shape[0]
    epochs = perms.shape[0]
    w = w.copy()
    for e in range(epochs):
        idx = perms[e]
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            batch = idx[start:stop]
            Xb = X[batch]
            yb = y[batch]
            nb = Xb.shape[0]
            p = _sigmoid_scores_impl(Xb, w, b)
            r = p - yb
            w = w - lr * (np.dot(r, Xb) / nb)
            b = b - lr * (np.sum(r) / nb)
    return w, b


sigmoid_scores_numpy = _sigmoid_scores_impl
logistic_grad_numpy = _logistic_grad_impl
sgd_epochs_numpy = _sgd_epochs_impl

if HAVE_NUMBA:
    _sigmoid_scores_jit = njit(cache=True)(_sigmoid_scores_impl)
    sigmoid_scores_jit = _sigmoid_scores_jit

    @njit(cache=True)
    def logistic_grad_jit(X, y, w, b):
        n = X.shape[0]
        p = _sigmoid_scores_jit(X, w, b)
        r = p - y
        grad_w = np.dot(r, X) / n
        grad_b = np.sum(r) / n
        return grad_w, grad_b

    @njit(cache=True)
    def _sgd_epochs_jit(X, y, w, b, perms, lr, batch_size):
        n = X.shape[0]
        epochs = perms.shape[0]
        w = w.copy()
        for e in range(epochs):
            idx = perms[e]
            for start in range(0, n, batch_size):
                stop = min(start + batch_size, n)
                batch = idx[start:stop]
                Xb = X[batch]
                yb = y[batch]
                nb = Xb.shape[0]
                p = _sigmoid_scores_jit(Xb, w, b)
                r = p - yb
                w = w - lr * (np.dot(r, Xb) / nb)
                b = b - lr * (np.sum(r) / nb)
        return w, b

    sgd_epochs_jit = _sgd_epochs_jit
else:  # pragma: no cover
    sigmoid_scores_jit = sigmoid_scores_numpy
    logistic_grad_jit = logistic_grad_numpy
    sgd_epochs_jit = sgd_epochs_numpy

if USE_NUMBA:
    sigmoid_scores = sigmoid_scores_jit
    logistic_grad = logistic_grad_jit
    sgd_epochs = sgd_epochs_jit
else:
    sigmoid_scores = sigmoid_scores_numpy
    logistic_grad = logistic_grad_numpy
    sgd_epochs = sgd_epochs_numpy


def warmup() -> None:
    """Trigger JIT compilation on tiny inputs so timings exclude compilation."""
    X = np.zeros((4, 3))
    y = np.zeros(4)
    w = np.zeros(3)
    perms = np.arange(4, dtype=np.int64).reshape(1, 4)
    sigmoid_scores(X, w, 0.0)
    logistic_grad(X, y, w, 0.0)
    sgd_epochs(X, y, w, 0.0, perms, 0.1, 2)
