"""Desk-scale transducer: GRU audio encoder, GRU label predictor, joint network.

Blank is the last output index (``vocab_size``). Recurrent layers use a
minimal gated cell with one update gate and one candidate::

    z = sigmoid([x, h] W_z + b_z)
    c = tanh([x, h] W_c + b_c)
    h' = h + z * (c - h)

Encoder and predictor run one step at a time, so row ``t`` of any output only
depends on inputs ``<= t`` and is bit-identical however long the input is.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Tensor


class ConfigError(ValueError):
    """Inconsistent configuration, or input that does not match it."""


class CheckpointError(ValueError):
    """Checkpoint on disk disagrees with its manifest or the expected model."""


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 10
    d_model: int = 64
    encoder_layers: int = 2
    predictor_layers: int = 1
    joint_dim: int = 64
    vocab_size: int = 24

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        d, j, v = self.d_model, self.joint_dim, self.vocab_size
        shapes = []
        for layer in range(self.encoder_layers):
            width = self.feature_dim if layer == 0 else d
            shapes.append((f"encoder.{layer}.w", (width + d, 2 * d)))
            shapes.append((f"encoder.{layer}.b", (2 * d,)))
        shapes.append(("predictor.embed", (v, d)))
        shapes.append(("predictor.start", (d,)))
        for layer in range(self.predictor_layers):
            shapes.append((f"predictor.{layer}.w", (2 * d, 2 * d)))
            shapes.append((f"predictor.{layer}.b", (2 * d,)))
        shapes += [
            ("joint.enc", (d, j)),
            ("joint.pred", (d, j)),
            ("joint.bias", (j,)),
            ("joint.out", (j, v + 1)),
            ("joint.out_bias", (v + 1,)),
        ]
        return shapes

    def param_count(self) -> int:
        """Closed form; must agree with ``param_shapes``."""
        d, j, v = self.d_model, self.joint_dim, self.vocab_size
        f, le, lp = self.feature_dim, self.encoder_layers, self.predictor_layers
        encoder = (f + d) * 2 * d + 2 * d + (le - 1) * ((2 * d) * 2 * d + 2 * d)
        predictor = v * d + d + lp * ((2 * d) * 2 * d + 2 * d)
        joint = 2 * d * j + j + j * (v + 1) + (v + 1)
        return encoder + predictor + joint


class ModelParameters:
    """Named trainable tensors in a fixed order."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.tensors: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape in config.param_shapes():
            if name not in arrays:
                raise ConfigError(f"missing parameter {name}")
            arr = np.array(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = Tensor(arr, requires_grad=True, name=name)
        extra = set(arrays) - set(self.tensors)
        if extra:
            raise ConfigError(f"unknown parameters: {sorted(extra)}")

    @classmethod
    def init(
        cls, config: ModelConfig, seed: int = 0, scale: float | None = None, gate_bias: float = -1.0
    ) -> ModelParameters:
        """Seeded initial weights.

        By default matrices are Glorot-uniform, biases zero except the update
        gates, which start at ``gate_bias``. A negative gate bias makes the
        recurrent layers keep most of their state per step early in training,
        so multi-character tokens are recognised before the gates are learned.
        ``scale`` switches to plain ``uniform(-scale, scale)`` for everything.
        """
        rng = np.random.default_rng(seed)
        d = config.d_model
        arrays = {}
        for name, shape in config.param_shapes():
            if scale is not None:
                arrays[name] = rng.uniform(-scale, scale, size=shape)
                continue
            if len(shape) == 2:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
            else:
                arrays[name] = np.zeros(shape)
            if name.endswith(".b"):
                arrays[name][:d] = gate_bias
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config: ModelConfig) -> ModelParameters:
        return cls(config, {name: np.zeros(shape) for name, shape in config.param_shapes()})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def copy(self) -> ModelParameters:
        return ModelParameters(self.config, self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])


# --- recurrent stacks -------------------------------------------------------


def _gru_step(x: Tensor, h: Tensor, w: Tensor, b: Tensor, d: int) -> Tensor:
    gates = nx.affine(nx.concat([x, h], axis=1), w, b)
    z = nx.sigmoid(gates[:, :d])
    c = nx.tanh(gates[:, d:])
    return h + z * (c - h)


def _run_stack(inputs: list[Tensor], params: ModelParameters, prefix: str, layers: int) -> list[Tensor]:
    d = params.config.d_model
    batch = inputs[0].shape[0]
    seq = inputs
    for layer in range(layers):
        w, b = params[f"{prefix}.{layer}.w"], params[f"{prefix}.{layer}.b"]
        h = nx.constant(np.zeros((batch, d)))
        out = []
        for x in seq:
            h = _gru_step(x, h, w, b, d)
            out.append(h)
        seq = out
    return seq


def encode_batch(frames: np.ndarray, params: ModelParameters) -> Tensor:
    """(B, T, F) frames -> (B, T, d_model) encoder states."""
    frames = np.asarray(frames, dtype=np.float64)
    cfg = params.config
    if frames.ndim != 3 or frames.shape[2] != cfg.feature_dim:
        raise ConfigError(f"frames must be (B, T, {cfg.feature_dim}), got {frames.shape}")
    if frames.shape[1] < 1:
        raise ContractError("encode needs at least one frame")
    steps = [nx.constant(frames[:, t, :]) for t in range(frames.shape[1])]
    return nx.stack(_run_stack(steps, params, "encoder", cfg.encoder_layers), axis=1)


def predict_batch(labels: np.ndarray, params: ModelParameters) -> Tensor:
    """(B, U) label ids -> (B, U+1, d_model); row 0 is the empty-prefix state."""
    cfg = params.config
    labels = np.asarray(labels, dtype=np.int64).reshape(len(labels), -1)
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.vocab_size):
        raise ContractError(f"predictor labels must lie in [0, {cfg.vocab_size}); blank is not a label")
    batch, length = labels.shape
    start = nx.broadcast_to(params["predictor.start"].reshape(1, cfg.d_model), (batch, cfg.d_model))
    steps = [start]
    if length:
        embedded = params["predictor.embed"][labels]
        steps += [embedded[:, k, :] for k in range(length)]
    return nx.stack(_run_stack(steps, params, "predictor", cfg.predictor_layers), axis=1)


def joint_cells(enc_rows: Tensor, pred_rows: Tensor, params: ModelParameters) -> Tensor:
    """Paired (N, d) encoder and predictor rows -> (N, V+1) log-probs."""
    hidden = nx.tanh(
        nx.affine(enc_rows, params["joint.enc"], params["joint.bias"], rowwise=True)
        + nx.matmul(pred_rows, params["joint.pred"], rowwise=True)
    )
    logits = nx.affine(hidden, params["joint.out"], params["joint.out_bias"], rowwise=True)
    return nx.log_softmax(logits, axis=-1)


def joint_grid(enc: Tensor, pred: Tensor, params: ModelParameters) -> Tensor:
    """(B, T, d) x (B, U+1, d) -> (B, T, U+1, V+1) log-probs."""
    cfg = params.config
    b, t, d = enc.shape
    u1 = pred.shape[1]
    j = cfg.joint_dim
    enc_proj = nx.affine(enc.reshape(b * t, d), params["joint.enc"], params["joint.bias"], rowwise=True)
    pred_proj = nx.matmul(pred.reshape(b * u1, d), params["joint.pred"], rowwise=True)
    hidden = nx.tanh(
        nx.broadcast_to(enc_proj.reshape(b, t, 1, j), (b, t, u1, j))
        + nx.broadcast_to(pred_proj.reshape(b, 1, u1, j), (b, t, u1, j))
    )
    logits = nx.affine(
        hidden.reshape(b * t * u1, j), params["joint.out"], params["joint.out_bias"], rowwise=True
    )
    return nx.log_softmax(logits, axis=-1).reshape(b, t, u1, cfg.vocab_size + 1)


# --- single-utterance surface ----------------------------------------------


def encode(frames, params: ModelParameters) -> Tensor:
    """(T, F) -> (T, d_model); causal in time."""
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ConfigError(f"frames must be 2-D (T, F), got shape {frames.shape}")
    out = encode_batch(frames[None], params)
    return out.reshape(out.shape[1], out.shape[2])


def predict(label_prefix, params: ModelParameters) -> Tensor:
    """Label prefix of length u -> (u+1, d_model)."""
    labels = np.asarray(list(label_prefix), dtype=np.int64).reshape(1, -1)
    out = predict_batch(labels, params)
    return out.reshape(out.shape[1], out.shape[2])


def joint(enc_row: Tensor, pred_row: Tensor, params: ModelParameters) -> Tensor:
    d = params.config.d_model
    out = joint_cells(nx.constant(enc_row).reshape(1, d), nx.constant(pred_row).reshape(1, d), params)
    return out.reshape(out.shape[1])


@dataclass
class LatticeLogProbs:
    grid: Tensor  # (T, U+1, V+1)

    @property
    def T(self) -> int:
        return self.grid.shape[0]

    @property
    def U(self) -> int:
        return self.grid.shape[1] - 1

    @property
    def vocab_size(self) -> int:
        return self.grid.shape[2] - 1


def lattice(frames, labels, params: ModelParameters) -> LatticeLogProbs:
    enc = encode(frames, params)
    pred = predict(labels, params)
    t, d = enc.shape
    grid = joint_grid(enc.reshape(1, t, d), pred.reshape(1, pred.shape[0], d), params)
    return LatticeLogProbs(grid.reshape(grid.shape[1:]))


# --- checkpoints ------------------------------------------------------------

MANIFEST = "manifest.json"
PARAMS_BIN = "params.bin"
OPTIMIZER_BIN = "optimizer.bin"


def _write_bin(path: Path, arrays: list[np.ndarray]) -> None:
    flat = np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    path.write_bytes(flat.astype("<f8").tobytes())


def _read_bin(path: Path, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    total = int(sum(int(np.prod(s)) for s in shapes))
    if raw.size != total:
        raise CheckpointError(f"{path.name}: expected {total} floats, found {raw.size}")
    out, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        out.append(raw[offset : offset + n].reshape(shape).astype(np.float64))
        offset += n
    return out


def save_checkpoint(
    path,
    params: ModelParameters,
    step: int = 0,
    extra: dict | None = None,
    optimizer_state: dict[str, np.ndarray] | None = None,
) -> Path:
    """Write ``manifest.json`` + ``params.bin`` (+ ``optimizer.bin``)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": asdict(params.config),
        "step": int(step),
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
    }
    if extra:
        manifest.update(extra)
    _write_bin(path / PARAMS_BIN, [t.data for t in params.tensors.values()])
    if optimizer_state is not None:
        names = list(optimizer_state)
        manifest["optimizer"] = [{"name": n, "shape": list(np.shape(optimizer_state[n]))} for n in names]
        _write_bin(path / OPTIMIZER_BIN, [np.asarray(optimizer_state[n]) for n in names])
    elif (path / OPTIMIZER_BIN).exists():
        (path / OPTIMIZER_BIN).unlink()
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return path


@dataclass
class Checkpoint:
    params: ModelParameters
    step: int
    manifest: dict
    optimizer_state: dict[str, np.ndarray] | None


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        config = ModelConfig(**manifest["config"])
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable manifest in {path}: {err}") from err
    if expected is not None and config != expected:
        raise CheckpointError(f"checkpoint config {config} does not match expected {expected}")
    listed = [(p["name"], tuple(p["shape"])) for p in manifest["params"]]
    if listed != [(n, tuple(s)) for n, s in config.param_shapes()]:
        raise CheckpointError("parameter names/shapes in manifest disagree with its config")
    arrays = _read_bin(path / PARAMS_BIN, [s for _, s in listed])
    params = ModelParameters(config, dict(zip([n for n, _ in listed], arrays)))
    opt = None
    if "optimizer" in manifest and (path / OPTIMIZER_BIN).exists():
        entries = [(o["name"], tuple(o["shape"])) for o in manifest["optimizer"]]
        opt = dict(zip([n for n, _ in entries], _read_bin(path / OPTIMIZER_BIN, [s for _, s in entries])))
    return Checkpoint(params, int(manifest.get("step", 0)), manifest, opt)
