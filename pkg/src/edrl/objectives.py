"""Policy-gradient, MWER and combined training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import numerics as nx
from .numerics import ContractError, Tensor


@dataclass(frozen=True)
class LossWeights:
    rl_weight: float = 0.5  # lambda
    rnnt_weight: float = 1.0

    def __post_init__(self):
        if self.rl_weight < 0 or self.rnnt_weight < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class TrajectoryBatch:
    """Per-trajectory differentiable log-probs with detached values."""

    logprobs: list[Tensor]
    values: list[np.ndarray]

    def __post_init__(self):
        if not self.logprobs:
            raise ContractError("a trajectory batch needs at least one trajectory")
        if len(self.logprobs) != len(self.values):
            raise ContractError("one value sequence per trajectory is required")
        for lp, v in zip(self.logprobs, self.values):
            if isinstance(v, Tensor) and v.requires_grad:
                raise ContractError("values must be detached (apply stop_gradient)")
            if lp.shape[0] != np.shape(v.data if isinstance(v, Tensor) else v)[0]:
                raise ContractError("log-prob and value sequences differ in length")


def _detached(v) -> np.ndarray:
    if isinstance(v, Tensor):
        if v.requires_grad:
            raise ContractError("values must be detached (apply stop_gradient)")
        return v.data
    return np.asarray(v, dtype=np.float64)


def edrl_loss(batch: TrajectoryBatch) -> Tensor:
    """``(1/N) sum_tau sum_k -log P(a_k) V_k`` over the batch's trajectories."""
    n = len(batch.logprobs)
    terms = [nx.sum(lp * nx.constant(_detached(v))) for lp, v in zip(batch.logprobs, batch.values)]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (-1.0 / n)


def edrl_loss_flat(logprobs: Tensor, values: np.ndarray, weights: np.ndarray) -> Tensor:
    """Same objective over concatenated paths; ``weights`` carries each path's 1/N."""
    v = _detached(values)
    if v.shape != logprobs.shape or np.shape(weights) != logprobs.shape:
        raise ContractError("flat log-probs, values and weights must align")
    return -nx.sum(logprobs * nx.constant(v * np.asarray(weights, dtype=np.float64)))


def word_errors(hyp_words, ref_words) -> int:
    vocab: dict[str, int] = {}
    ids = lambda words: [vocab.setdefault(w, len(vocab)) for w in words]  # noqa: E731
    return kernels.levenshtein(ids(hyp_words), ids(ref_words))


def mwer_loss(logprobs: Tensor, hyp_words, ref_words) -> Tensor:
    """Expected word errors relative to the k-best mean.

    ``logprobs`` is a (k,) tensor of hypothesis log-probabilities; they are
    renormalised over the k-best with a softmax.
    """
    k = logprobs.shape[0]
    if k < 2 or len(hyp_words) != k:
        raise ContractError("mwer_loss needs k >= 2 hypotheses with matching log-probs")
    errors = np.array([word_errors(h, ref_words) for h in hyp_words], dtype=np.float64)
    return mwer_from_errors(logprobs, errors)


def mwer_from_errors(logprobs: Tensor, errors) -> Tensor:
    errors = np.asarray(errors, dtype=np.float64)
    if logprobs.shape[0] < 2:
        raise ContractError("mwer_loss needs k >= 2 hypotheses")
    probs = nx.exp(nx.log_softmax(logprobs))
    return nx.sum(probs * nx.constant(errors - errors.mean()))


def total_loss(rl, rnnt, weights: LossWeights = LossWeights()) -> Tensor:
    return nx.mul(weights.rl_weight, rl) + nx.mul(weights.rnnt_weight, rnnt)
