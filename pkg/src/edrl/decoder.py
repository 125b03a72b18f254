"""Alignment-synchronous beam search over the transducer, plus re-scoring.

Every beam step extends each live hypothesis by exactly one action: a blank
consumes the current frame, an emission appends a token and stays on the
frame (at most ``max_emits_per_frame`` times). Hypotheses are action paths,
so two alignments of the same token string stay separate.

Ties are broken by the action sequence, ordered blank < Emit(0) < Emit(1) ...
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as tm
from . import numerics as nx
from .model import ModelParameters
from .numerics import ContractError, Tensor


@dataclass(frozen=True)
class BeamConfig:
    expand: int = 5
    topk: int = 4
    max_emits_per_frame: int = 8

    def __post_init__(self):
        if not self.expand >= self.topk >= 1:
            raise ContractError(f"need expand >= topk >= 1, got expand={self.expand}, topk={self.topk}")
        if self.max_emits_per_frame < 1:
            raise ContractError("max_emits_per_frame must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    actions: tuple[int, ...]
    action_logprobs: tuple[float, ...]
    tokens: tuple[int, ...]
    score: float
    blank_id: int

    def validate(self, T: int) -> None:
        check_actions(self.actions, T, self.blank_id)
        if self.tokens != tuple(a for a in self.actions if a != self.blank_id):
            raise ContractError("tokens are not the emitted subsequence of actions")
        if len(self.action_logprobs) != len(self.actions):
            raise ContractError("one log-probability per action is required")
        if abs(self.score - float(np.sum(self.action_logprobs))) > 1e-12:
            raise ContractError("score is not the sum of action log-probabilities")

    def actions_string(self) -> str:
        return format_actions(self.actions, self.blank_id)


def format_actions(actions, blank_id: int) -> str:
    return " ".join("B" if a == blank_id else f"E{a}" for a in actions)


def parse_actions(text: str, blank_id: int) -> tuple[int, ...]:
    out = []
    for item in text.split():
        if item == "B":
            out.append(blank_id)
        elif item.startswith("E") and item[1:].isdigit():
            out.append(int(item[1:]))
        else:
            raise ContractError(f"bad action {item!r}")
    return tuple(out)


def check_actions(actions, T: int, blank_id: int) -> None:
    actions = list(actions)
    if sum(1 for a in actions if a == blank_id) != T:
        raise ContractError(f"an action path over {T} frames needs exactly {T} blanks")
    if not actions or actions[-1] != blank_id:
        raise ContractError("the final action must be a blank")
    if any(a < 0 or a > blank_id for a in actions):
        raise ContractError("action id out of range")


def _order_key(actions: tuple[int, ...], blank_id: int) -> tuple[int, ...]:
    return tuple(-1 if a == blank_id else a for a in actions)


@dataclass
class _Hyp:
    actions: tuple[int, ...]
    key: tuple[int, ...]
    logprobs: tuple[float, ...]
    score: float
    t: int
    frame_emits: int
    state: list = field(repr=False)  # per predictor layer, (d,) arrays
    pred_out: np.ndarray = field(repr=False)


def _predictor_step(params: ModelParameters, tokens: np.ndarray | None, states: list[np.ndarray]):
    """One predictor step for a batch; ``tokens=None`` feeds the start vector."""
    cfg = params.config
    d = cfg.d_model
    if tokens is None:
        x = np.broadcast_to(params["predictor.start"].data, (states[0].shape[0], d))
    else:
        x = params["predictor.embed"].data[tokens]
    new_states = []
    h_in = nx.constant(x)
    for layer in range(cfg.predictor_layers):
        h = tm._gru_step(
            h_in, nx.constant(states[layer]), params[f"predictor.{layer}.w"], params[f"predictor.{layer}.b"], d
        )
        new_states.append(h.data)
        h_in = h
    return new_states, h_in.data


def _joint_rows(params: ModelParameters, enc: np.ndarray, t: list[int], pred: np.ndarray) -> np.ndarray:
    return tm.joint_cells(nx.constant(enc[t]), nx.constant(pred), params).data


def beam_search(params: ModelParameters, frames, config: BeamConfig = BeamConfig()) -> list[Trajectory]:
    """Top-k action paths, best first."""
    cfg = params.config
    blank = cfg.blank_id
    with nx.no_grad():
        enc = tm.encode(frames, params).data
        T = enc.shape[0]
        zeros = [np.zeros((1, cfg.d_model)) for _ in range(cfg.predictor_layers)]
        state, out = _predictor_step(params, None, zeros)
        root = _Hyp((), (), (), 0.0, 0, 0, [s[0] for s in state], out[0])
        live, finished = [root], []
        while live:
            lp = _joint_rows(params, enc, [h.t for h in live], np.stack([h.pred_out for h in live]))
            candidates = []
            for i, hyp in enumerate(live):
                allowed = [blank] if hyp.frame_emits >= config.max_emits_per_frame else range(cfg.vocab_size + 1)
                ranked = sorted(allowed, key=lambda a: (-lp[i, a], -1 if a == blank else a))
                for a in ranked[: config.expand]:
                    key = hyp.key + (-1 if a == blank else a,)
                    candidates.append((hyp.score + lp[i, a], key, i, a))
            pool = [(h.score, h.key, None, h) for h in finished] + candidates
            pool.sort(key=lambda c: (-c[0], c[1]))
            kept, seen = [], set()
            for cand in pool:
                if cand[1] in seen:
                    continue
                seen.add(cand[1])
                kept.append(cand)
                if len(kept) == config.topk:
                    break
            finished, live = _materialize(params, kept, live, lp, blank, T)
        if not finished:
            raise RuntimeError("beam search ended with an empty beam")
        finished.sort(key=lambda h: (-h.score, h.key))
    return [
        Trajectory(h.actions, h.logprobs, tuple(a for a in h.actions if a != blank), h.score, blank)
        for h in finished
    ]


def _materialize(params, kept, live, lp, blank, T):
    finished, new_live, pending = [], [], []
    for score, key, i, payload in kept:
        if i is None:
            finished.append(payload)
            continue
        parent, a = live[i], payload
        hyp = _Hyp(
            parent.actions + (a,), key, parent.logprobs + (float(lp[i, a]),), float(score),
            parent.t, parent.frame_emits, parent.state, parent.pred_out,
        )
        if a == blank:
            hyp.t += 1
            hyp.frame_emits = 0
            (finished if hyp.t == T else new_live).append(hyp)
        else:
            hyp.frame_emits += 1
            pending.append(hyp)
            new_live.append(hyp)
    if pending:
        states = [np.stack([h.state[k] for h in pending]) for k in range(params.config.predictor_layers)]
        tokens = np.array([h.actions[-1] for h in pending])
        new_states, outs = _predictor_step(params, tokens, states)
        for n, hyp in enumerate(pending):
            hyp.state = [s[n] for s in new_states]
            hyp.pred_out = outs[n]
    return finished, new_live


def _trajectory_count(T: int, V: int, cap: int) -> int:
    return sum(V**k for k in range(cap + 1)) ** T


MAX_EXHAUSTIVE = 100_000


def exhaustive_search(params: ModelParameters, frames, max_emits_per_frame: int) -> Trajectory:
    """Global best action path by enumerating every one; test oracle."""
    cfg = params.config
    blank, V = cfg.blank_id, cfg.vocab_size
    with nx.no_grad():
        enc = tm.encode(frames, params)
        T = enc.shape[0]
        if _trajectory_count(T, V, max_emits_per_frame) > MAX_EXHAUSTIVE:
            raise ContractError("too many trajectories for exhaustive search")
        pred_cache: dict[tuple[int, ...], Tensor] = {}
        dist_cache: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}

        def dist(t, tokens):
            if (t, tokens) not in dist_cache:
                if tokens not in pred_cache:
                    pred_cache[tokens] = tm.predict(tokens, params)[len(tokens)]
                dist_cache[(t, tokens)] = tm.joint(enc[t], pred_cache[tokens], params).data
            return dist_cache[(t, tokens)]

        best = None
        stack = [((), (), 0, 0)]  # actions, logprobs, t, emits in frame
        while stack:
            actions, lps, t, emits = stack.pop()
            if t == T:
                cand = (float(np.sum(lps)), _order_key(actions, blank), actions, lps)
                if best is None or (-cand[0], cand[1]) < (-best[0], best[1]):
                    best = cand
                continue
            tokens = tuple(a for a in actions if a != blank)
            lp = dist(t, tokens)
            stack.append((actions + (blank,), lps + (float(lp[blank]),), t + 1, 0))
            if emits < max_emits_per_frame:
                for v in range(V):
                    stack.append((actions + (v,), lps + (float(lp[v]),), t, emits + 1))
    score, _, actions, lps = best
    return Trajectory(actions, lps, tuple(a for a in actions if a != blank), score, blank)


def _path_indices(actions, blank):
    ts, us = [], []
    t = u = 0
    for a in actions:
        ts.append(t)
        us.append(u)
        if a == blank:
            t += 1
        else:
            u += 1
    return ts, us


def rescore(params: ModelParameters, frames, actions) -> Tensor:
    """Differentiable per-action log-probabilities along one action path."""
    frames = np.asarray(frames, dtype=np.float64)
    flat, _ = rescore_batch(params, tm.encode_batch(frames[None], params), [0], [tuple(actions)], [frames.shape[0]])
    return flat


def rescore_batch(params: ModelParameters, enc: Tensor, utt_index, action_paths, frame_lens):
    """Re-score many paths against batched encoder output.

    ``enc`` is (B, T, d); path ``n`` belongs to utterance ``utt_index[n]``.
    Returns the flat (sum of path lengths,) log-prob tensor and the start
    offset of each path.
    """
    blank = params.config.blank_id
    paths = [tuple(p) for p in action_paths]
    for n, p in enumerate(paths):
        check_actions(p, int(frame_lens[utt_index[n]]), blank)
    tokens = [[a for a in p if a != blank] for p in paths]
    width = max((len(t) for t in tokens), default=0)
    padded = np.zeros((len(paths), width), dtype=np.int64)
    for n, tok in enumerate(tokens):
        padded[n, : len(tok)] = tok
    pred = tm.predict_batch(padded, params)  # (N, width+1, d)
    b_idx, t_idx, n_idx, u_idx, act = [], [], [], [], []
    offsets = []
    for n, p in enumerate(paths):
        offsets.append(len(act))
        ts, us = _path_indices(p, blank)
        b_idx += [utt_index[n]] * len(p)
        t_idx += ts
        n_idx += [n] * len(p)
        u_idx += us
        act += list(p)
    enc_rows = enc[np.array(b_idx), np.array(t_idx)]
    pred_rows = pred[np.array(n_idx), np.array(u_idx)]
    logp = tm.joint_cells(enc_rows, pred_rows, params)
    return logp[np.arange(len(act)), np.array(act)], np.array(offsets + [len(act)])
