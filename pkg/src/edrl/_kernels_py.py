"""Pure-Python/NumPy reference versions of the compiled kernels."""

from __future__ import annotations

import numpy as np


def logcumsumexp_backward(x: np.ndarray, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of ``out = logcumsumexp(x)`` along axis 1 of 2-D arrays.

    d out_j / d x_k = exp(x_k - out_j) for k <= j. The exponent is never
    positive, so the dense lower-triangular form is safe.
    """
    n = x.shape[1]
    expo = x[:, None, :] - out[:, :, None]  # [row, j, k]
    mask = np.tril(np.ones((n, n), dtype=bool))
    weights = np.where(mask, np.exp(np.where(mask, expo, 0.0)), 0.0)
    return np.einsum("rj,rjk->rk", g, weights)


def prefix_error_increments(hyp: np.ndarray, ref: np.ndarray) -> np.ndarray:
    m = len(ref)
    row = list(range(m + 1))
    best_prev = 0
    inc = np.zeros(len(hyp), dtype=np.int64)
    for j, h in enumerate(hyp, start=1):
        new = [j] + [0] * m
        for i in range(1, m + 1):
            cost = 0 if ref[i - 1] == h else 1
            new[i] = min(row[i] + 1, new[i - 1] + 1, row[i - 1] + cost)
        row = new
        best = min(row)
        inc[j - 1] = best - best_prev
        best_prev = best
    return inc


def levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    m = len(b)
    row = list(range(m + 1))
    for j, x in enumerate(a, start=1):
        new = [j] + [0] * m
        for i in range(1, m + 1):
            new[i] = min(row[i] + 1, new[i - 1] + 1, row[i - 1] + (b[i - 1] != x))
        row = new
    return int(row[m])
