"""Two-stage training (RNN-T, then EDRL or MWER fine-tuning) and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import model as tm
from . import numerics as nx
from .data import Corpus, Utterance
from .decoder import BeamConfig, Trajectory, beam_search, rescore_batch
from .model import ConfigError, ModelConfig, ModelParameters
from .objectives import LossWeights, edrl_loss_flat, mwer_from_errors, total_loss, word_errors
from .optim import Adam, clip_global_norm
from .reward import EdrlConfig, ScatterMap, reward_trace
from .rnnt_loss import rnnt_nll_batch

log = logging.getLogger(__name__)

METHODS = ("rnnt", "edrl", "mwer")
METRIC_FIELDS = ("step", "split", "loss", "wer", "oracle_wer")


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    method: str = "rnnt"
    weights: LossWeights = LossWeights()
    edrl: EdrlConfig = EdrlConfig()
    beam: BeamConfig = BeamConfig()
    model: ModelConfig = ModelConfig()
    batch_size: int = 16
    steps: int = 3000
    lr: float | None = None  # None: 1e-3 for rnnt, 1e-4 for fine-tuning
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    eval_interval: int = 500
    eval_limit: int | None = None  # dev utterances per periodic eval; None = all
    seed: int = 0
    init_seed: int = 0
    debug: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.batch_size < 1 or self.steps < 0 or self.eval_interval < 1:
            raise ConfigError("batch_size and eval_interval must be positive, steps non-negative")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")

    @property
    def step_size(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-3 if self.method == "rnnt" else 1e-4


@dataclass
class EvalReport:
    step: int
    wer: float
    oracle_wer: float
    loss: float
    utterances: int
    words: int
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    def __post_init__(self):
        if not 0.0 <= self.oracle_wer <= self.wer:
            raise ValueError(f"oracle WER {self.oracle_wer} outside [0, WER={self.wer}]")


@dataclass
class Batch:
    frames: np.ndarray  # (B, T, F) zero padded
    labels: np.ndarray  # (B, U) zero padded
    frame_lens: np.ndarray
    label_lens: np.ndarray
    utts: list[Utterance]


def make_batch(utts: list[Utterance]) -> Batch:
    t_max = max(u.frames.shape[0] for u in utts)
    u_max = max(len(u.reference_tokens) for u in utts)
    feat = utts[0].frames.shape[1]
    frames = np.zeros((len(utts), t_max, feat))
    labels = np.zeros((len(utts), u_max), dtype=np.int64)
    for i, u in enumerate(utts):
        frames[i, : u.frames.shape[0]] = u.frames
        labels[i, : len(u.reference_tokens)] = u.reference_tokens
    return Batch(
        frames,
        labels,
        np.array([u.frames.shape[0] for u in utts]),
        np.array([len(u.reference_tokens) for u in utts]),
        utts,
    )


def batch_rnnt_loss(params: ModelParameters, batch: Batch, enc: nx.Tensor | None = None) -> nx.Tensor:
    """Mean per-utterance transducer NLL."""
    if enc is None:
        enc = tm.encode_batch(batch.frames, params)
    grid = tm.joint_grid(enc, tm.predict_batch(batch.labels, params), params)
    losses = rnnt_nll_batch(grid, batch.labels, batch.frame_lens, batch.label_lens)
    return nx.sum(losses) * (1.0 / len(batch.utts))


# --- word-level scoring -----------------------------------------------------


def word_edit_ops(hyp: list[str], ref: list[str]) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of one minimum-cost alignment."""
    n, m = len(hyp), len(ref)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]))
    sub = dele = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]):
            sub += hyp[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            dele += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return int(sub), dele, ins


@dataclass
class Decoded:
    utt: Utterance
    hyps: list[Trajectory]


def decode(params: ModelParameters, utts: list[Utterance], beam: BeamConfig) -> list[Decoded]:
    return [Decoded(u, beam_search(params, u.frames, beam)) for u in utts]


def score_decoded(
    decoded: list[Decoded], smap: ScatterMap, step: int = 0, loss: float = float("nan")
) -> EvalReport:
    errors = oracle = words = 0
    sub = dele = ins = 0
    for item in decoded:
        ref = item.utt.reference_text.split()
        hyp_errors = [word_errors(smap.text(h.tokens).split(), ref) for h in item.hyps]
        errors += hyp_errors[0]
        oracle += min(hyp_errors)
        words += len(ref)
        s, d, i = word_edit_ops(smap.text(item.hyps[0].tokens).split(), ref)
        sub, dele, ins = sub + s, dele + d, ins + i
    words_ = max(words, 1)
    return EvalReport(step, errors / words_, oracle / words_, loss, len(decoded), words, sub, dele, ins)


def mean_rnnt_loss(params: ModelParameters, utts: list[Utterance], batch_size: int = 32) -> float:
    total = 0.0
    with nx.no_grad():
        for start in range(0, len(utts), batch_size):
            chunk = utts[start : start + batch_size]
            total += batch_rnnt_loss(params, make_batch(chunk)).item() * len(chunk)
    return total / max(len(utts), 1)


def evaluate(
    params: ModelParameters,
    utts: list[Utterance],
    smap: ScatterMap,
    beam: BeamConfig = BeamConfig(),
    step: int = 0,
) -> EvalReport:
    if smap.vocab_size != params.config.vocab_size:
        raise ConfigError(
            f"model vocabulary ({params.config.vocab_size}) does not match data ({smap.vocab_size})"
        )
    return score_decoded(decode(params, utts, beam), smap, step, mean_rnnt_loss(params, utts))


# --- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParameters
    step: int
    reports: list[EvalReport] = field(default_factory=list)
    checkpoint: Path | None = None


def _fine_tune_loss(params, batch: Batch, config: TrainConfig, smap: ScatterMap) -> nx.Tensor:
    enc = tm.encode_batch(batch.frames, params)
    paths, owners, values, weights, groups = [], [], [], [], []
    for b, utt in enumerate(batch.utts):
        trajs = beam_search(params, utt.frames, config.beam)
        if config.debug:
            for tr in trajs:
                tr.validate(utt.frames.shape[0])
        start = len(paths)
        for tr in trajs:
            paths.append(tr.actions)
            owners.append(b)
            if config.method == "edrl":
                trace = reward_trace(tr, utt.reference_text, smap, config.edrl)
                values.append(trace.action_values)
                weights.append(np.full(len(tr.actions), 1.0 / (len(trajs) * len(batch.utts))))
        groups.append((start, len(paths), trajs))
    logp, offsets = rescore_batch(params, enc, owners, paths, batch.frame_lens)

    if config.method == "edrl":
        rl = edrl_loss_flat(logp, np.concatenate(values), np.concatenate(weights))
    else:
        # segment-sum matrix turns per-action log-probs into per-path totals
        seg = np.zeros((len(paths), logp.shape[0]))
        for n in range(len(paths)):
            seg[n, offsets[n] : offsets[n + 1]] = 1.0
        path_lp = nx.matmul(nx.constant(seg), logp.reshape(-1, 1)).reshape(len(paths))
        terms = []
        for b, (lo, hi, trajs) in enumerate(groups):
            if hi - lo < 2:
                continue
            ref = batch.utts[b].reference_text.split()
            errs = [word_errors(smap.text(t.tokens).split(), ref) for t in trajs]
            terms.append(mwer_from_errors(path_lp[lo:hi], errs))
        rl = nx.constant(0.0)
        for term in terms:
            rl = rl + term
        rl = rl * (1.0 / len(batch.utts))
    if config.weights.rnnt_weight > 0:
        rnnt = batch_rnnt_loss(params, batch, enc)
    else:
        rnnt = nx.constant(0.0)
    return total_loss(rl, rnnt, config.weights)


def _dump(out_dir: Path, step: int, batch: Batch, loss: float, grad_norm: float) -> Path:
    path = out_dir / f"abort_step{step}.json"
    path.write_text(
        json.dumps(
            {
                "step": step,
                "loss": repr(loss),
                "grad_norm": repr(grad_norm),
                "utterances": [u.id for u in batch.utts],
                "references": [u.reference_text for u in batch.utts],
            },
            indent=2,
        )
    )
    return path


def _append_metrics(path: Path, rows: list[dict]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def train(
    config: TrainConfig,
    corpus: Corpus,
    out_dir,
    init: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run ``config.steps`` steps of ``config.method`` and checkpoint to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set = corpus.splits["train"]
    dev_set = corpus.splits.get("dev", [])
    if init is None and config.method != "rnnt":
        raise ConfigError(f"--method {config.method} fine-tunes an RNN-T checkpoint; pass --init")

    start_step = 0
    opt_state = None
    if init is not None:
        ckpt = tm.load_checkpoint(init)
        params = ckpt.params
        if ckpt.manifest.get("vocab") not in (None, corpus.vocab):
            raise ConfigError("checkpoint vocabulary does not match the dataset")
        if ckpt.manifest.get("method") == config.method and ckpt.optimizer_state is not None:
            start_step, opt_state = ckpt.step, ckpt.optimizer_state
    else:
        model_cfg = replace(
            config.model, vocab_size=corpus.scatter_map.vocab_size, feature_dim=corpus.config.feature_dim
        )
        params = ModelParameters.init(model_cfg, config.init_seed)
    if params.config.vocab_size != corpus.scatter_map.vocab_size:
        raise ConfigError("model vocabulary size does not match the dataset")
    if params.config.feature_dim != corpus.config.feature_dim:
        raise ConfigError("model feature_dim does not match the dataset")

    opt = Adam({n: t.shape for n, t in params.items()}, config.step_size, config.beta1, config.beta2, config.eps)
    if opt_state is not None:
        opt.load_state_dict(opt_state)

    smap = corpus.scatter_map
    metrics_path = out_dir / "metrics.csv"
    reports: list[EvalReport] = []
    running, running_n = 0.0, 0
    step = start_step
    for step in range(start_step, config.steps):
        rng = np.random.default_rng([config.seed, step])
        idx = rng.choice(len(train_set), size=min(config.batch_size, len(train_set)), replace=False)
        batch = make_batch([train_set[i] for i in sorted(idx)])
        if config.method == "rnnt":
            loss = batch_rnnt_loss(params, batch)
        else:
            loss = _fine_tune_loss(params, batch, config, smap)
        grads = nx.backward(loss, dict(params.items()))
        grads, norm = clip_global_norm(grads, config.clip_norm)
        value = loss.item()
        if not math.isfinite(value) or not math.isfinite(norm):
            dump = _dump(out_dir, step, batch, value, norm)
            raise NumericalAbort(f"non-finite loss/gradient at step {step}; batch dumped to {dump}")
        opt.step(params.tensors, grads)
        running += value
        running_n += 1
        done = step + 1
        if done % config.eval_interval == 0 or done == config.steps:
            rows = [{"step": done, "split": "train", "loss": _fmt(running / running_n), "wer": "", "oracle_wer": ""}]
            if dev_set:
                subset = dev_set if config.eval_limit is None else dev_set[: config.eval_limit]
                report = evaluate(params, subset, smap, config.beam, done)
                reports.append(report)
                rows.append(
                    {
                        "step": done,
                        "split": "dev",
                        "loss": _fmt(report.loss),
                        "wer": _fmt(report.wer),
                        "oracle_wer": _fmt(report.oracle_wer),
                    }
                )
                msg = f"step {done}: train loss {running / running_n:.4f} dev wer {report.wer:.4f} oracle {report.oracle_wer:.4f}"
            else:
                msg = f"step {done}: train loss {running / running_n:.4f}"
            _append_metrics(metrics_path, rows)
            running, running_n = 0.0, 0
            log.info(msg)
            if progress is not None:
                progress(msg)
    final_step = max(config.steps, start_step)
    ckpt_path = tm.save_checkpoint(
        out_dir,
        params,
        final_step,
        extra={"method": config.method, "vocab": corpus.vocab, "train_config": _config_json(config)},
        optimizer_state=opt.state_dict(),
    )
    return TrainResult(params, final_step, reports, ckpt_path)


def _config_json(config: TrainConfig) -> dict:
    out = asdict(config)
    out["lr"] = config.step_size
    return out


# --- gamma sweep ------------------------------------------------------------


@dataclass
class SweepRow:
    label: str
    wer: float
    oracle_wer: float


def sweep_gamma(
    config: TrainConfig,
    corpus: Corpus,
    init,
    values,
    out_dir,
    progress: Callable[[str], None] | None = None,
) -> list[SweepRow]:
    """Fine-tune once per discount factor from the same checkpoint and seed."""
    values = [float(v) for v in values]
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ConfigError("discount factors must lie in [0, 1]")
    out_dir = Path(out_dir)
    dev = corpus.splits["dev"]
    base = tm.load_checkpoint(init).params
    base_report = evaluate(base, dev, corpus.scatter_map, config.beam)
    rows = [SweepRow("RNN-T", base_report.wer, base_report.oracle_wer)]
    for gamma in values:
        cfg = replace(config, method="edrl", edrl=replace(config.edrl, gamma=gamma))
        result = train(cfg, corpus, out_dir / f"gamma_{gamma:g}", init=init, progress=progress)
        report = evaluate(result.params, dev, corpus.scatter_map, config.beam, result.step)
        rows.append(SweepRow(f"{gamma:g}", report.wer, report.oracle_wer))
    return rows


def format_sweep(rows: list[SweepRow]) -> str:
    lines = [f"{'gamma':<8} | {'Avg WER':>8} | {'Oracle':>8}", "-" * 30]
    for row in rows:
        lines.append(f"{row.label:<8} | {100 * row.wer:8.2f} | {100 * row.oracle_wer:8.2f}")
        if row.label == "RNN-T":
            lines.append("-" * 30)
    return "\n".join(lines)
