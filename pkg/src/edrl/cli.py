"""Command-line entry point: ``edrl <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import model as tm
from .data import DatasetError, SynthConfig, load_corpus, read_vocab, write_corpus
from .decoder import BeamConfig, Trajectory, parse_actions
from .model import CheckpointError, ConfigError
from .numerics import ContractError, DomainError, ShapeError
from .objectives import LossWeights
from .reward import EdrlConfig, ScatterMap, TokenizationError, format_trace, reward_trace
from .train import (
    NumericalAbort,
    TrainConfig,
    decode,
    evaluate,
    format_sweep,
    score_decoded,
    sweep_gamma,
    train,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

NEGATIVE_MODE_FLAGS = {"raw": "raw_edit_distance", "constant": "constant_minus_one"}
VISIBLE_SPACE = "␣"


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from err


def _add_beam(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beam-expand", type=int, default=5)
    p.add_argument("--topk", type=int, default=4)


def _add_fine_tune(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--rp", type=float, default=0.1)
    p.add_argument("--lambda", dest="rl_weight", type=float, default=0.5)
    p.add_argument("--rnnt-weight", type=float, default=1.0)
    _add_beam(p)
    p.add_argument("--steps", type=int, help="default 3000 for rnnt, 1000 for fine-tuning")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, help="default 1e-3 for rnnt, 1e-4 for fine-tuning")
    p.add_argument("--eval-interval", type=int, default=500)
    p.add_argument("--eval-limit", type=int, help="dev utterances per periodic evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--negative-mode", choices=sorted(NEGATIVE_MODE_FLAGS), default="raw")
    p.add_argument("--debug", action="store_true", help="validate every trajectory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edrl", description="Edit-distance RL for transducers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--dev", type=int, default=200)
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--sigma", type=float, default=0.1)

    p = sub.add_parser("train", help="RNN-T pretraining or RL fine-tuning")
    p.add_argument("--method", choices=["rnnt", "edrl", "mwer"], default="rnnt")
    p.add_argument("--out", required=True)
    _add_fine_tune(p)

    p = sub.add_parser("decode", help="beam-search a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="dev")
    _add_beam(p)

    p = sub.add_parser("evaluate", help="print WER and oracle WER")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="dev")
    _add_beam(p)

    p = sub.add_parser("sweep-gamma", help="fine-tune once per discount factor")
    p.add_argument("--values", type=_float_list, default=[0.0, 0.5, 0.95, 0.99])
    p.add_argument("--out", required=True)
    _add_fine_tune(p)

    p = sub.add_parser("reward-trace", help="print the per-token reward computation")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--vocab", required=True, help="one subword per line; '␣' stands for a space")
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--rp", type=float, default=0.1)
    p.add_argument("--negative-mode", choices=sorted(NEGATIVE_MODE_FLAGS), default="raw")
    p.add_argument("--actions", help="action path such as 'E0 B E3 B'; default: one blank after each token")
    return parser


def _train_config(args, method: str) -> TrainConfig:
    steps = args.steps if args.steps is not None else (3000 if method == "rnnt" else 1000)
    return TrainConfig(
        method=method,
        weights=LossWeights(args.rl_weight, args.rnnt_weight),
        edrl=EdrlConfig(args.gamma, args.rp, NEGATIVE_MODE_FLAGS[args.negative_mode]),
        beam=BeamConfig(args.beam_expand, args.topk),
        batch_size=args.batch_size,
        steps=steps,
        lr=args.lr,
        eval_interval=args.eval_interval,
        eval_limit=args.eval_limit,
        seed=args.seed,
        debug=args.debug,
    )


def _echo(msg: str) -> None:
    print(msg, flush=True)


def _load_for_eval(args):
    corpus = load_corpus(args.data, splits=(args.split,))
    if args.split not in corpus.splits:
        raise ConfigError(f"{args.data} has no {args.split} split")
    ckpt = tm.load_checkpoint(args.ckpt)
    if ckpt.manifest.get("vocab") not in (None, corpus.vocab):
        raise ConfigError("checkpoint vocabulary does not match the dataset")
    return corpus, ckpt


def cmd_gen_data(args) -> None:
    config = SynthConfig(sigma=args.sigma, seed=args.seed)
    corpus = write_corpus(args.out, config, args.train, args.dev)
    _echo(f"wrote {args.train} train / {args.dev} dev utterances and {len(corpus.vocab)} subwords to {args.out}")


def cmd_train(args) -> None:
    config = _train_config(args, args.method)
    corpus = load_corpus(args.data)
    result = train(config, corpus, args.out, init=args.init, progress=_echo)
    _echo(f"saved step {result.step} checkpoint to {result.checkpoint}")


def cmd_decode(args) -> None:
    corpus, ckpt = _load_for_eval(args)
    smap = corpus.scatter_map
    decoded = decode(ckpt.params, corpus.splits[args.split], BeamConfig(args.beam_expand, args.topk))
    with open(args.out, "w", encoding="utf-8") as fh:
        for item in decoded:
            hyps = [
                {
                    "tokens": list(h.tokens),
                    "text": smap.text(h.tokens),
                    "score": h.score,
                    "actions": h.actions_string(),
                }
                for h in item.hyps
            ]
            fh.write(json.dumps({"id": item.utt.id, "hyps": hyps}) + "\n")
    report = score_decoded(decoded, smap, ckpt.step)
    _echo(f"decoded {len(decoded)} utterances; WER {100 * report.wer:.2f}% oracle {100 * report.oracle_wer:.2f}%")


def cmd_evaluate(args) -> None:
    corpus, ckpt = _load_for_eval(args)
    report = evaluate(
        ckpt.params, corpus.splits[args.split], corpus.scatter_map, BeamConfig(args.beam_expand, args.topk), ckpt.step
    )
    _echo(f"WER {100 * report.wer:.2f}%")
    _echo(f"oracle WER {100 * report.oracle_wer:.2f}%")
    _echo(
        f"{report.utterances} utterances, {report.words} words: "
        f"{report.substitutions} sub, {report.deletions} del, {report.insertions} ins; loss {report.loss:.4f}"
    )


def cmd_sweep_gamma(args) -> None:
    if args.init is None:
        raise ConfigError("sweep-gamma needs --init with an RNN-T checkpoint")
    config = _train_config(args, "edrl")
    rows = sweep_gamma(config, load_corpus(args.data), args.init, args.values, Path(args.out), progress=_echo)
    _echo(format_sweep(rows))


def _visible(text: str) -> str:
    return text.replace(VISIBLE_SPACE, " ")


def cmd_reward_trace(args) -> None:
    vocab = [_visible(p) for p in read_vocab(args.vocab)]
    smap = ScatterMap.from_vocab(vocab)
    hyp, ref = _visible(args.hyp), _visible(args.ref)
    smap.char_ids(ref)
    tokens = smap.tokenize(hyp)
    blank = smap.vocab_size
    if args.actions:
        actions = parse_actions(args.actions, blank)
    else:
        actions = tuple(a for t in tokens for a in (t, blank)) or (blank,)
    emitted = tuple(a for a in actions if a != blank)
    if emitted != tuple(tokens):
        raise ContractError("--actions must emit exactly the tokens of --hyp")
    traj = Trajectory(actions, (0.0,) * len(actions), emitted, 0.0, blank)
    config = EdrlConfig(args.gamma, args.rp, NEGATIVE_MODE_FLAGS[args.negative_mode])
    trace = reward_trace(traj, ref, smap, config)
    _echo(f"hyp {hyp!r} ref {ref!r}")
    _echo(format_trace(trace, tokens, actions, smap, hyp))
    _echo(f"total errors {int(trace.token_errors.sum())}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "sweep-gamma": cmd_sweep_gamma,
    "reward-trace": cmd_reward_trace,
}

USER_ERRORS = (
    ConfigError,
    ContractError,
    CheckpointError,
    DatasetError,
    TokenizationError,
    ShapeError,
    DomainError,
    FileNotFoundError,
    NotADirectoryError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except NumericalAbort as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
