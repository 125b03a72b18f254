"""Synthetic transduction corpus.

Each reference character becomes a run of 2-3 frames: a one-hot character
vector, an energy channel fixed at 1, and Gaussian noise. References never
contain two identical adjacent characters, so runs are unambiguous and a
noise-free corpus is perfectly transcribable by a per-frame argmax.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .model import ConfigError
from .reward import ScatterMap

DEFAULT_LETTERS = "adehlorw"


class DatasetError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class SynthConfig:
    letters: str = DEFAULT_LETTERS
    vocab_size: int = 24
    vocab: tuple[str, ...] | None = None
    min_tokens: int = 2
    max_tokens: int = 6
    min_frames_per_char: int = 2
    max_frames_per_char: int = 3
    sigma: float = 0.1
    seed: int = 17
    single_letters: int = 3  # letters that are tokens on their own
    space_prob: float = 0.2  # chance a sampled token is the word separator

    def __post_init__(self):
        if len(set(self.letters)) != len(self.letters) or " " in self.letters or not self.letters:
            raise ConfigError("letters must be distinct non-space characters")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("need 1 <= min_tokens <= max_tokens")
        if not 1 <= self.min_frames_per_char <= self.max_frames_per_char:
            raise ConfigError("need 1 <= min_frames_per_char <= max_frames_per_char")
        if not 0.0 <= self.space_prob < 1.0:
            raise ConfigError("space_prob must lie in [0, 1)")
        if self.single_letters < 0:
            raise ConfigError("single_letters must be non-negative")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.vocab is not None:
            object.__setattr__(self, "vocab", tuple(self.vocab))

    @property
    def alphabet(self) -> tuple[str, ...]:
        return (" ",) + tuple(self.letters)

    @property
    def feature_dim(self) -> int:
        return len(self.alphabet) + 1

    def to_json(self) -> dict:
        out = asdict(self)
        out["vocab"] = list(self.vocab) if self.vocab is not None else None
        return out


@dataclass
class Utterance:
    id: str
    frames: np.ndarray  # (T, feature_dim)
    reference_tokens: list[int]
    reference_text: str

    def __eq__(self, other):
        return (
            isinstance(other, Utterance)
            and self.id == other.id
            and self.reference_tokens == other.reference_tokens
            and self.reference_text == other.reference_text
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


def _valid_piece(piece: str) -> bool:
    if not piece or any(a == b for a, b in zip(piece, piece[1:])):
        return False
    return " " not in piece[1:]


def _prefix_clash(piece: str, vocab) -> bool:
    return any(piece.startswith(q) or q.startswith(piece) for q in vocab)


@lru_cache(maxsize=32)
def _build_vocab(config: SynthConfig) -> tuple[str, ...]:
    """Seeded prefix-free vocabulary.

    No token is a prefix of another, so a left-to-right reader knows a token
    is complete at its last character. That keeps the reference tokenization
    decidable by a causal encoder even at the end of an utterance.
    """
    if config.vocab is not None:
        vocab = config.vocab
        if len(set(vocab)) != len(vocab):
            raise ConfigError("duplicate subword strings in vocabulary")
        for piece in vocab:
            if not piece or any(c not in config.alphabet for c in piece):
                raise ConfigError(f"subword {piece!r} is empty or leaves the alphabet")
        return vocab
    rng = np.random.default_rng([config.seed, 0x0C0B])
    letters = list(config.letters)
    n_single = min(config.single_letters, len(letters))
    singles = [letters[int(i)] for i in sorted(rng.choice(len(letters), size=n_single, replace=False))]
    vocab = [" "] + singles
    if config.vocab_size < len(vocab):
        raise ConfigError(f"vocab_size must be at least {len(vocab)}")
    starts = [c for c in letters if c not in singles]
    attempts = 0
    while len(vocab) < config.vocab_size:
        attempts += 1
        if attempts > 100_000 or not starts:
            raise ConfigError("cannot draw enough prefix-free subwords for this alphabet")
        length = int(rng.integers(2, 4))
        piece = starts[int(rng.integers(len(starts)))] + "".join(
            letters[int(rng.integers(len(letters)))] for _ in range(length - 1)
        )
        if _valid_piece(piece) and not _prefix_clash(piece, vocab):
            vocab.append(piece)
    return tuple(vocab)


def gen_vocab(config: SynthConfig) -> tuple[list[str], ScatterMap]:
    """Vocabulary (blank implicit as id ``len(vocab)``) and its scatter map."""
    vocab = list(_build_vocab(config))
    return vocab, ScatterMap.from_vocab(vocab, config.alphabet)


def _sample_reference(config: SynthConfig, smap: ScatterMap, rng: np.random.Generator) -> list[int]:
    vocab = smap.vocab
    space = vocab.index(" ") if " " in vocab else None
    others = np.array([i for i in range(len(vocab)) if i != space])
    for _ in range(100_000):
        n = int(rng.integers(config.min_tokens, config.max_tokens + 1))
        ids = rng.choice(others, size=n)
        if space is not None:
            ids = np.where(rng.random(n) < config.space_prob, space, ids)
        text = "".join(vocab[int(i)] for i in ids)
        if text[0] == " " or text[-1] == " " or any(a == b for a, b in zip(text, text[1:])):
            continue
        tokens = smap.tokenize(text)
        if config.min_tokens <= len(tokens) <= config.max_tokens:
            return tokens
    raise ConfigError("could not sample a valid reference; loosen the token limits")


def render(text: str, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    index = {c: i for i, c in enumerate(config.alphabet)}
    rows = []
    for ch in text:
        reps = int(rng.integers(config.min_frames_per_char, config.max_frames_per_char + 1))
        row = np.zeros(config.feature_dim)
        row[index[ch]] = 1.0
        row[-1] = 1.0
        noise = rng.normal(0.0, 1.0, size=(reps, config.feature_dim)) * config.sigma
        rows.append(row + noise)
    return np.concatenate(rows, axis=0)


def gen_utterance(config: SynthConfig, index: int) -> Utterance:
    _, smap = gen_vocab(config)
    rng = np.random.default_rng([config.seed, int(index)])
    tokens = _sample_reference(config, smap, rng)
    text = smap.text(tokens)
    return Utterance(f"utt{index:06d}", render(text, config, rng), tokens, text)


def gen_split(config: SynthConfig, start: int, count: int) -> list[Utterance]:
    return [gen_utterance(config, i) for i in range(start, start + count)]


# --- files ------------------------------------------------------------------


def write_dataset(path, utterances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            record = {
                "id": utt.id,
                "text": utt.reference_text,
                "tokens": [int(t) for t in utt.reference_tokens],
                "frames": utt.frames.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def read_dataset(path) -> list[Utterance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frames = np.array(rec["frames"], dtype=np.float64)
                if frames.ndim != 2 or frames.shape[0] < 1:
                    raise ValueError("frames must be a non-empty 2-D list")
                out.append(Utterance(str(rec["id"]), frames, [int(t) for t in rec["tokens"]], str(rec["text"])))
            except (ValueError, KeyError, TypeError) as err:
                raise DatasetError(f"{path}:{lineno}: malformed record ({err})") from err
    return out


def write_vocab(path, vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for piece in vocab:
            fh.write(piece + "\n")


def read_vocab(path) -> list[str]:
    """One subword per line; only the newline is stripped, so spaces survive."""
    with open(path, encoding="utf-8") as fh:
        pieces = [line.rstrip("\n").rstrip("\r") for line in fh]
    if pieces and pieces[-1] == "":
        pieces.pop()
    if any(not p for p in pieces):
        raise DatasetError(f"{path}: empty vocabulary line")
    if len(set(pieces)) != len(pieces):
        raise ConfigError(f"{path}: duplicate subword strings")
    return pieces


@dataclass
class Corpus:
    config: SynthConfig
    vocab: list[str]
    scatter_map: ScatterMap
    splits: dict[str, list[Utterance]] = field(default_factory=dict)


def write_corpus(out_dir, config: SynthConfig, n_train: int, n_dev: int) -> Corpus:
    """Train indices ``[0, n_train)``, dev indices after them: disjoint by construction."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab, smap = gen_vocab(config)
    corpus = Corpus(config, vocab, smap)
    corpus.splits["train"] = gen_split(config, 0, n_train)
    corpus.splits["dev"] = gen_split(config, n_train, n_dev)
    write_vocab(out / "vocab.txt", vocab)
    for name, utts in corpus.splits.items():
        write_dataset(out / f"{name}.jsonl", utts)
    (out / "synth.json").write_text(json.dumps(config.to_json(), indent=2))
    return corpus


def load_corpus(data_dir, splits=("train", "dev")) -> Corpus:
    data_dir = Path(data_dir)
    raw = json.loads((data_dir / "synth.json").read_text())
    config = SynthConfig(**raw)
    vocab = read_vocab(data_dir / "vocab.txt")
    corpus = Corpus(config, vocab, ScatterMap.from_vocab(vocab, config.alphabet))
    for name in splits:
        path = data_dir / f"{name}.jsonl"
        if path.exists():
            corpus.splits[name] = read_dataset(path)
    return corpus
