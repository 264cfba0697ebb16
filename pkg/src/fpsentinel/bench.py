"""Benchmark the JIT-compiled kernels against the pure-numpy fallback.

Run as ``python -m fpsentinel.bench``.  The same kernel bodies back both
paths, so this measures compilation payoff only.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import kernels


def _time(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def run(rows: int, dim: int, epochs: int, batch_size: int) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(7)
    X = rng.normal(size=(rows, dim))
    y = (rng.random(rows) > 0.9).astype(np.float64)
    w = np.zeros(dim)
    perms = np.stack([rng.permutation(rows) for _ in range(epochs)]).astype(np.int64)

    if kernels.HAVE_NUMBA:
        kernels.sgd_epochs_jit(X[:8], y[:8], w, 0.0, perms[:1, :8], 0.1, 4)
        kernels.logistic_grad_jit(X[:8], y[:8], w, 0.0)
        kernels.sigmoid_scores_jit(X[:8], w, 0.0)

    results = []
    for name, jit_fn, np_fn, args in (
        ("sgd_epochs", kernels.sgd_epochs_jit, kernels.sgd_epochs_numpy,
         (X, y, w, 0.0, perms, 0.1, batch_size)),
        ("logistic_grad", kernels.logistic_grad_jit, kernels.logistic_grad_numpy,
         (X, y, w, 0.0)),
        ("sigmoid_scores", kernels.sigmoid_scores_jit, kernels.sigmoid_scores_numpy,
         (X, w, 0.0)),
    ):
        t_jit = _time(jit_fn, *args) if kernels.HAVE_NUMBA else float("nan")
        t_np = _time(np_fn, *args)
        results.append((name, t_jit, t_np))
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=20000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--batch-size", type=int, default=32)
    args = parser.parse_args()

    print(f"numba available: {kernels.HAVE_NUMBA}; active path: "
          f"{'numba' if kernels.USE_NUMBA else 'numpy'}")
    print(f"{'kernel':<16} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for name, t_jit, t_np in run(args.rows, args.dim, args.epochs, args.batch_size):
        speedup = t_np / t_jit if t_jit > 0 else float("nan")
        print(f"{name:<16} {t_jit * 1e3:>12.2f} {t_np * 1e3:>12.2f} {speedup:>8.2f}x")


if __name__ == "__main__":
    main()
