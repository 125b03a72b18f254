"""Transducer negative log-likelihood by forward recursion in log space.

    alpha(0, 0) = 0
    alpha(t, u) = logaddexp(alpha(t-1, u) + blank(t-1, u),
                            alpha(t, u-1) + emit(t, u-1))
    nll = -(alpha(T-1, U) + blank(T-1, U))

Columns are filled one label position at a time. Within column ``u`` the
recursion over ``t`` is a linear scan, solved in closed form with a running
log-sum-exp: with ``B_t`` the exclusive cumulative blank log-prob down the
column and ``c_t = alpha(t, u-1) + emit(t, u-1)``,

    alpha(t, u) = B_t + logcumsumexp(c - B)_t

so the tape holds O(U) nodes instead of O(T U).
"""

from __future__ import annotations

import itertools
from math import comb

import numpy as np

from . import numerics as nx
from .model import LatticeLogProbs
from .numerics import ContractError, Tensor


def _exclusive_cumsum(x: Tensor) -> Tensor:
    return nx.cumsum(x, axis=-1) - x


def rnnt_nll_batch(grid: Tensor, labels: np.ndarray, frame_lens, label_lens) -> Tensor:
    """Per-utterance losses for a padded (B, T, U+1, V+1) lattice batch."""
    grid = nx.constant(grid)
    batch, t_max, u1, v1 = grid.shape
    blank_id = v1 - 1
    labels = np.asarray(labels, dtype=np.int64).reshape(batch, -1)
    frame_lens = np.asarray(frame_lens, dtype=np.int64)
    label_lens = np.asarray(label_lens, dtype=np.int64)
    if labels.shape[1] != u1 - 1:
        raise ContractError(f"labels of width {labels.shape[1]} do not fit lattice with U={u1 - 1}")
    if labels.size and (labels.min() < 0 or labels.max() >= blank_id):
        raise ContractError(f"label ids must lie in [0, {blank_id})")
    if np.any(frame_lens < 1) or np.any(frame_lens > t_max) or np.any(label_lens > u1 - 1):
        raise ContractError("frame/label lengths exceed the lattice")

    blank = grid[..., blank_id]  # (B, T, U+1)
    columns = [_exclusive_cumsum(blank[:, :, 0])]
    if u1 > 1:
        bi = np.arange(batch)[:, None, None]
        ti = np.arange(t_max)[None, :, None]
        ui = np.arange(u1 - 1)[None, None, :]
        emit = grid[bi, ti, ui, labels[:, None, :]]  # (B, T, U)
        for u in range(1, u1):
            incoming = columns[-1] + emit[:, :, u - 1]
            down = _exclusive_cumsum(blank[:, :, u])
            columns.append(down + nx.logcumsumexp(incoming - down))
    alpha = nx.stack(columns, axis=2)  # (B, T, U+1)
    rows = np.arange(batch)
    final = alpha[rows, frame_lens - 1, label_lens] + blank[rows, frame_lens - 1, label_lens]
    return -final


def rnnt_nll(lattice, labels) -> Tensor:
    """Scalar loss for one utterance; differentiable through the lattice."""
    grid = lattice.grid if isinstance(lattice, LatticeLogProbs) else nx.constant(lattice)
    labels = np.asarray(list(labels), dtype=np.int64)
    t, u1, v1 = grid.shape
    if len(labels) != u1 - 1:
        raise ContractError(f"{len(labels)} labels for a lattice with U={u1 - 1}")
    if len(labels) and labels.max() >= v1 - 1:
        raise ContractError(f"label id {labels.max()} is not below vocab size {v1 - 1}")
    losses = rnnt_nll_batch(grid.reshape(1, t, u1, v1), labels[None, :], [t], [len(labels)])
    return losses.reshape(())


MAX_ENUM_PRODUCT = 64
MAX_ENUM_COUNT = 100_000


def alignment_count(T: int, U: int) -> int:
    """Paths of T blanks and U emissions whose last action is a blank."""
    return comb(T - 1 + U, U) if T >= 1 else 0


def enumerate_alignments(T: int, U: int) -> list[tuple[str, ...]]:
    """All action strings ('B' or 'E') with the final action a blank."""
    if T < 1 or U < 0:
        raise ContractError("need T >= 1 and U >= 0")
    if T * U > MAX_ENUM_PRODUCT or alignment_count(T, U) > MAX_ENUM_COUNT:
        raise ContractError(f"refusing to enumerate alignments for T={T}, U={U}")
    out = []
    for emit_pos in itertools.combinations(range(T - 1 + U), U):
        path = ["B"] * (T - 1 + U)
        for p in emit_pos:
            path[p] = "E"
        out.append(tuple(path) + ("B",))
    return out


def brute_force_nll(grid: np.ndarray, labels) -> float:
    """Log-sum-exp over every alignment; test oracle."""
    grid = np.asarray(grid, dtype=np.float64)
    T, u1, v1 = grid.shape
    labels = list(labels)
    scores = []
    for path in enumerate_alignments(T, u1 - 1):
        t = u = 0
        s = 0.0
        for a in path:
            if a == "B":
                s += grid[t, u, v1 - 1]
                t += 1
            else:
                s += grid[t, u, labels[u]]
                u += 1
        scores.append(s)
    scores = np.array(scores)
    top = scores.max()
    return float(-(top + np.log(np.exp(scores - top).sum())))
