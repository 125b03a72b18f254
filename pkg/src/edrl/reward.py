"""Edit-distance rewards and discounted values for transducer action paths.

Pipeline for one hypothesis:

1. scatter the emitted token ids into character ids,
2. per-character increments of the prefix-min edit distance
   ``D(j) = min_i lev(hyp[:j], ref[:i])`` against the reference,
3. gather increments back into per-token errors ``e_u``,
4. reward ``-e_u`` for tokens that add errors and ``r_p`` for the rest,
5. discounted values over the whole action path, blanks included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .numerics import ContractError

NEGATIVE_MODES = ("raw_edit_distance", "constant_minus_one")


class TokenizationError(ValueError):
    """Text cannot be tokenized with the given vocabulary."""


@dataclass(frozen=True)
class ScatterMap:
    """Token id -> character ids, plus the character table.

    Blank (id ``len(token_chars)``) has no entry and never scatters.
    """

    alphabet: tuple[str, ...]
    token_chars: tuple[tuple[int, ...], ...]

    @classmethod
    def from_vocab(cls, vocab: Sequence[str], alphabet: Sequence[str] | None = None) -> ScatterMap:
        if alphabet is None:
            alphabet = sorted({c for piece in vocab for c in piece})
        alphabet = tuple(alphabet)
        index = {c: i for i, c in enumerate(alphabet)}
        chars = []
        for piece in vocab:
            if not piece:
                raise ContractError("vocabulary entries must be non-empty")
            try:
                chars.append(tuple(index[c] for c in piece))
            except KeyError as err:
                raise ContractError(f"token {piece!r} uses a character outside the alphabet") from err
        return cls(alphabet, tuple(chars))

    @property
    def vocab_size(self) -> int:
        return len(self.token_chars)

    @property
    def vocab(self) -> list[str]:
        return ["".join(self.alphabet[c] for c in chars) for chars in self.token_chars]

    def lengths(self, tokens) -> np.ndarray:
        return np.array([len(self.token_chars[t]) for t in tokens], dtype=np.int64)

    def scatter(self, tokens) -> np.ndarray:
        """Concatenated character ids of ``tokens``."""
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise ContractError(f"token id {t} has no characters (blank or out of range)")
        if len(tokens) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(self.token_chars[t], dtype=np.int64) for t in tokens])

    def text(self, tokens) -> str:
        return "".join(self.alphabet[c] for c in self.scatter(tokens))

    def char_ids(self, text: str) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.alphabet)}
        try:
            return np.array([index[c] for c in text], dtype=np.int64)
        except KeyError as err:
            raise ContractError(f"character {err.args[0]!r} is not in the alphabet") from None

    def tokenize(self, text: str) -> list[int]:
        """Greedy longest match, left to right."""
        lookup = {piece: i for i, piece in enumerate(self.vocab)}
        longest = max((len(p) for p in lookup), default=0)
        out, pos = [], 0
        while pos < len(text):
            for width in range(min(longest, len(text) - pos), 0, -1):
                tok = lookup.get(text[pos : pos + width])
                if tok is not None:
                    out.append(tok)
                    pos += width
                    break
            else:
                raise TokenizationError(f"no vocabulary entry matches at position {pos} ({text[pos:]!r})")
        return out


@dataclass(frozen=True)
class EdrlConfig:
    gamma: float = 0.95
    r_p: float = 0.1
    negative_mode: str = "raw_edit_distance"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.r_p > 0:
            raise ContractError(f"r_p must be positive, got {self.r_p}")
        if self.negative_mode not in NEGATIVE_MODES:
            raise ContractError(f"negative_mode must be one of {NEGATIVE_MODES}")


@dataclass
class RewardTrace:
    char_increments: np.ndarray  # per hypothesis character, 0 or 1
    token_errors: np.ndarray  # e_u per emitted token
    token_rewards: np.ndarray  # r_u per emitted token
    action_values: np.ndarray  # V per action, blanks included


def prefix_error_increments(hyp_chars, ref_chars) -> np.ndarray:
    """``D(j) - D(j-1)`` for each hypothesis character; always 0 or 1.

    Accepts strings or integer id sequences.
    """
    if isinstance(hyp_chars, str) or isinstance(ref_chars, str):
        hyp_chars = [ord(c) for c in hyp_chars]
        ref_chars = [ord(c) for c in ref_chars]
    return kernels.prefix_error_increments(hyp_chars, ref_chars)


def scatter_and_gather(tokens, scatter_map: ScatterMap, char_increments, hyp_chars=None) -> np.ndarray:
    """Sum character increments over each token's span."""
    increments = np.asarray(char_increments, dtype=np.int64)
    lengths = scatter_map.lengths(tokens)
    if lengths.sum() != len(increments):
        raise ContractError(
            f"tokens scatter to {lengths.sum()} characters but {len(increments)} increments were given"
        )
    if hyp_chars is not None and not np.array_equal(scatter_map.scatter(tokens), np.asarray(hyp_chars)):
        raise ContractError("scattered tokens do not spell the hypothesis characters")
    owner = np.repeat(np.arange(len(lengths)), lengths)
    return np.bincount(owner, weights=increments, minlength=len(lengths)).astype(np.int64)


def token_rewards(errors, config: EdrlConfig) -> np.ndarray:
    e = np.asarray(errors, dtype=np.int64)
    if np.any(e < 0):
        raise ContractError("token errors must be non-negative")
    penalty = -e.astype(np.float64) if config.negative_mode == "raw_edit_distance" else -np.ones(len(e))
    return np.where(e > 0, penalty, config.r_p)


def action_values(actions, rewards, gamma: float, blank_id: int) -> np.ndarray:
    """``V_k = r_k + gamma * V_{k+1}`` backwards from ``V = 0`` past the end.

    Emissions take their token's reward in order; blanks have immediate
    reward 0 and only receive discounted credit.
    """
    actions = list(actions)
    rewards = np.asarray(rewards, dtype=np.float64)
    emits = sum(1 for a in actions if a != blank_id)
    if emits != len(rewards):
        raise ContractError(f"{emits} emissions but {len(rewards)} token rewards")
    values = np.zeros(len(actions))
    running = 0.0
    u = len(rewards)
    for k in range(len(actions) - 1, -1, -1):
        r = 0.0
        if actions[k] != blank_id:
            u -= 1
            r = rewards[u]
        running = r + gamma * running
        values[k] = running
    return values


def reward_trace(trajectory, reference_text: str, scatter_map: ScatterMap, config: EdrlConfig) -> RewardTrace:
    """Full scatter -> edit distance -> gather -> reward -> value pass."""
    tokens = list(trajectory.tokens)
    hyp = scatter_map.scatter(tokens)
    ref = scatter_map.char_ids(reference_text)
    inc = prefix_error_increments(hyp, ref)
    errors = scatter_and_gather(tokens, scatter_map, inc)
    rewards = token_rewards(errors, config)
    values = action_values(trajectory.actions, rewards, config.gamma, scatter_map.vocab_size)
    return RewardTrace(inc, errors, rewards, values)


def format_trace(trace: RewardTrace, tokens, actions, scatter_map: ScatterMap, hyp_text: str | None = None) -> str:
    """Aligned text table: one row per character, then the action row."""
    blank_id = scatter_map.vocab_size
    pieces = [scatter_map.vocab[t] for t in tokens]
    text = hyp_text if hyp_text is not None else "".join(pieces)
    lines = [f"{'char':>4} | {'inc':>3} | {'token':<8} | {'e_u':>3} | {'r_u':>7}"]
    pos = 0
    for u, piece in enumerate(pieces):
        for k, _ in enumerate(piece):
            ch = text[pos].replace(" ", "␣")
            first = k == 0
            token_col = repr(piece).replace(" ", "␣") if first else ""
            e_col = str(trace.token_errors[u]) if first else ""
            r_col = f"{trace.token_rewards[u]:.4g}" if first else ""
            lines.append(f"{ch:>4} | {trace.char_increments[pos]:>3} | {token_col:<8} | {e_col:>3} | {r_col:>7}")
            pos += 1
    lines.append("")
    labels = ["B" if a == blank_id else f"E{a}" for a in actions]
    lines.append("action | " + " ".join(f"{s:>8}" for s in labels))
    lines.append("V      | " + " ".join(f"{v:>8.4f}" for v in trace.action_values))
    return "\n".join(lines)
