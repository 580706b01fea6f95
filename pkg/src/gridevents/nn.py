"""From-scratch feed-forward classifier over 4 event classes.

Configurable depth/width/activation, inverted dropout (survivors scaled at
train time so evaluation needs no rescaling), softmax output, categorical
cross-entropy, plain minibatch SGD. Everything is numpy; models are plain
weight/bias lists and are immutable once training returns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import EventClass, N_CLASSES
from .preprocess import FeatureInstance
from .seeding import generator, subseed

ACTIVATIONS = ("sigmoid", "relu")

LEARNING_RATE_BOUNDS = (1e-5, 1e-1)
HIDDEN_LAYER_BOUNDS = (1, 8)
NODES_BOUNDS = (20, 500)
INPUT_DROPOUT_BOUNDS = (0.4, 0.9)
HIDDEN_DROPOUT_BOUNDS = (0.2, 0.7)


class InvalidDims(ValueError):
    """Model dimensions are unusable."""


class DimMismatch(ValueError):
    """Input length does not match the model's input dimension."""


class NonFiniteInput(ValueError):
    """Input contains NaN or infinity."""


class InsufficientData(ValueError):
    """Too few events in some class to split into train/validation."""


class MixedFeatureKinds(ValueError):
    """Training instances disagree on feature kind or frame rate."""


@dataclass(frozen=True)
class MlpArchitecture:
    """The six tuned hyperparameters of the classifier."""

    learning_rate: float
    n_hidden_layers: int
    nodes_per_layer: int
    input_dropout: float
    hidden_dropout: float
    activation: str

    def __post_init__(self):
        def check(name, value, lo, hi):
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")

        check("learning_rate", self.learning_rate, *LEARNING_RATE_BOUNDS)
        check("n_hidden_layers", self.n_hidden_layers, *HIDDEN_LAYER_BOUNDS)
        check("nodes_per_layer", self.nodes_per_layer, *NODES_BOUNDS)
        check("input_dropout", self.input_dropout, *INPUT_DROPOUT_BOUNDS)
        check("hidden_dropout", self.hidden_dropout, *HIDDEN_DROPOUT_BOUNDS)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "n_hidden_layers": self.n_hidden_layers,
            "nodes_per_layer": self.nodes_per_layer,
            "input_dropout": self.input_dropout,
            "hidden_dropout": self.hidden_dropout,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArchitecture":
        return cls(
            learning_rate=float(d["learning_rate"]),
            n_hidden_layers=int(d["n_hidden_layers"]),
            nodes_per_layer=int(d["nodes_per_layer"]),
            input_dropout=float(d["input_dropout"]),
            hidden_dropout=float(d["hidden_dropout"]),
            activation=str(d["activation"]),
        )


@dataclass
class MlpModel:
    """Weight set for one architecture.

    ``weights[i]`` has shape (fan_in, fan_out); hidden layer i computes
    ``act(x @ weights[i] + biases[i])`` and the last layer feeds softmax.
    """

    architecture: MlpArchitecture
    input_dim: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def output_dim(self) -> int:
        return N_CLASSES


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    train_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def init_model(arch: MlpArchitecture, input_dim: int, seed: int) -> MlpModel:
    """Initialize weights from a scaled uniform distribution (He scaling
    for ReLU, Glorot for sigmoid); biases start at zero."""
    if input_dim < 1:
        raise InvalidDims(f"input_dim must be >= 1, got {input_dim}")
    rng = np.random.default_rng(seed)
    dims = [input_dim] + [arch.nodes_per_layer] * arch.n_hidden_layers + [N_CLASSES]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if arch.activation == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(arch, input_dim, weights, biases)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _softmax(logits_: np.ndarray) -> np.ndarray:
    shifted = logits_ - logits_.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray | None:
    """Inverted-dropout keep mask, already scaled by 1/(1-p)."""
    if p <= 0.0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


def _as_batch(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimMismatch(
            f"input has shape {np.shape(x)}, model expects vectors of length {model.input_dim}")
    if not np.isfinite(X).all():
        raise NonFiniteInput("input contains NaN or infinity")
    return X, single


def _forward_pass(model: MlpModel, X: np.ndarray, rng: np.random.Generator | None,
                  keep_cache: bool):
    """One batch through the network. With an rng, inputs are zeroed with
    probability input_dropout and hidden activations with hidden_dropout
    (inverted scaling); without, the pass is dropout-free. The cache holds
    everything backprop needs, including the realized masks."""
    arch = model.architecture
    layer_inputs: list[np.ndarray] = []
    pre_acts: list[np.ndarray] = []
    hidden_masks: list[np.ndarray | None] = []

    a = X
    if rng is not None:
        mask = _dropout_mask(a.shape, arch.input_dropout, rng)
        if mask is not None:
            a = a * mask
    n_hidden = len(model.weights) - 1
    for i in range(n_hidden):
        if keep_cache:
            layer_inputs.append(a)
        z = a @ model.weights[i] + model.biases[i]
        if keep_cache:
            pre_acts.append(z)
        a = _activate(z, arch.activation)
        mask = _dropout_mask(a.shape, arch.hidden_dropout, rng) if rng is not None else None
        if keep_cache:
            hidden_masks.append(mask)
        if mask is not None:
            a = a * mask
    if keep_cache:
        layer_inputs.append(a)
    logits_ = a @ model.weights[-1] + model.biases[-1]
    return logits_, layer_inputs, pre_acts, hidden_masks


def logits(model: MlpModel, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Pre-softmax outputs; train-mode dropout when an rng is given."""
    X, single = _as_batch(model, x)
    out, _, _, _ = _forward_pass(model, X, rng, keep_cache=False)
    return out[0] if single else out


def forward(model: MlpModel, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Class-probability vector(s); components sum to 1.

    Passing an rng selects train mode (dropout applied); without one the
    pass is deterministic and dropout-free.
    """
    X, single = _as_batch(model, x)
    out, _, _, _ = _forward_pass(model, X, rng, keep_cache=False)
    probs = _softmax(out)
    return probs[0] if single else probs


def loss_and_gradients(
    model: MlpModel,
    X: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean categorical cross-entropy over a batch and its gradients.

    Backpropagation reuses the exact dropout masks of the forward pass
    (dropout off when rng is None). Returns (loss, dweights, dbiases).
    """
    labels = np.asarray(labels, dtype=int).ravel()
    X, _ = _as_batch(model, X)
    if len(labels) != len(X) or len(X) == 0:
        raise DimMismatch("batch inputs and labels must be non-empty and equal length")
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise ValueError(f"labels must be in 0..{N_CLASSES - 1}")
    arch = model.architecture

    logits_, layer_inputs, pre_acts, hidden_masks = _forward_pass(
        model, X, rng, keep_cache=True)
    probs = _softmax(logits_)

    n = len(X)
    eps = np.finfo(float).tiny
    loss = float(-np.log(probs[np.arange(n), labels] + eps).mean())

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    delta = (probs - onehot) / n

    n_layers = len(model.weights)
    dweights: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    dbiases: list[np.ndarray] = [None] * n_layers   # type: ignore[list-item]
    dweights[-1] = layer_inputs[-1].T @ delta
    dbiases[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1].T
    for i in range(n_layers - 2, -1, -1):
        if hidden_masks[i] is not None:
            upstream = upstream * hidden_masks[i]
        z = pre_acts[i]
        if arch.activation == "relu":
            dz = upstream * (z > 0.0)
        else:
            s = _activate(z, "sigmoid")
            dz = upstream * s * (1.0 - s)
        dweights[i] = layer_inputs[i].T @ dz
        dbiases[i] = dz.sum(axis=0)
        if i > 0:
            upstream = dz @ model.weights[i].T
    return loss, dweights, dbiases


def predict(model: MlpModel, x: np.ndarray | FeatureInstance) -> int:
    """Predicted class: argmax of the dropout-free forward pass, ties
    broken toward the lowest class index."""
    if isinstance(x, FeatureInstance):
        x = x.values
    if np.asarray(x).ndim != 1:
        raise DimMismatch("predict takes a single instance")
    return int(np.argmax(forward(model, x)))


def predict_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, X), axis=1)


def split_by_event(
    instances: Sequence[FeatureInstance],
    train_fraction: float,
    rng: np.random.Generator,
) -> tuple[list[int], list[int]]:
    """Stratified event-level split: all instances of one event land on the
    same side, and each class keeps at least one event per side.

    Per-PMU instances of one event are near-duplicates, so splitting at the
    instance level would leak labels across the partition.
    """
    events: dict[str, tuple[EventClass, list[int]]] = {}
    for i, inst in enumerate(instances):
        if inst.event_id not in events:
            events[inst.event_id] = (inst.class_label, [])
        events[inst.event_id][1].append(i)

    by_class: dict[EventClass, list[str]] = {}
    for event_id in sorted(events):
        by_class.setdefault(events[event_id][0], []).append(event_id)

    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in sorted(by_class):
        ids = by_class[cls]
        if len(ids) < 2:
            raise InsufficientData(
                f"class {int(cls)} has {len(ids)} event(s); need >= 2 to split")
        order = rng.permutation(len(ids))
        n_train = int(np.clip(round(train_fraction * len(ids)), 1, len(ids) - 1))
        for j, k in enumerate(order):
            target = train_idx if j < n_train else val_idx
            target.extend(events[ids[k]][1])
    return sorted(train_idx), sorted(val_idx)


def train(
    arch: MlpArchitecture,
    instances: Sequence[FeatureInstance],
    cfg: TrainConfig,
) -> tuple[MlpModel, float]:
    """Train on a stratified event-level split and report held-out accuracy.

    Deterministic per cfg.seed: the split, weight init, epoch shuffles, and
    dropout draws all derive from named sub-seeds of it, so in particular
    every architecture is evaluated against the same split.
    """
    if not instances:
        raise InsufficientData("no instances")
    kinds = {(inst.feature_kind, inst.fps) for inst in instances}
    if len(kinds) != 1:
        raise MixedFeatureKinds(f"instances mix feature kinds / rates: {sorted(kinds)}")

    train_idx, val_idx = split_by_event(
        instances, cfg.train_fraction, generator(cfg.seed, "split"))
    X = np.stack([instances[i].values for i in train_idx])
    y = np.array([int(instances[i].class_label) for i in train_idx])
    X_val = np.stack([instances[i].values for i in val_idx])
    y_val = np.array([int(instances[i].class_label) for i in val_idx])

    model = init_model(arch, X.shape[1], subseed(cfg.seed, "init"))
    shuffle_rng = generator(cfg.seed, "shuffle")
    dropout_rng = generator(cfg.seed, "dropout")
    lr = arch.learning_rate
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(X))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            _, dw, db = loss_and_gradients(model, X[batch], y[batch], dropout_rng)
            for i in range(len(model.weights)):
                model.weights[i] -= lr * dw[i]
                model.biases[i] -= lr * db[i]

    accuracy = float((predict_batch(model, X_val) == y_val).mean())
    return model, accuracy


MODEL_MAGIC = "gridevents-mlp-v1"


def save_model(model: MlpModel, path: str | Path) -> None:
    """Self-describing binary: one JSON header line, then the raw float64
    bytes of each weight matrix (row-major) and bias vector in layer order.
    Reloading reproduces predictions bit for bit."""
    header = {
        "format": MODEL_MAGIC,
        "architecture": model.architecture.to_dict(),
        "input_dim": model.input_dim,
        "shapes": [list(w.shape) for w in model.weights],
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype=float).tobytes())
            fh.write(np.ascontiguousarray(b, dtype=float).tobytes())


def load_model(path: str | Path) -> MlpModel:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != MODEL_MAGIC:
            raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
        arch = MlpArchitecture.from_dict(header["architecture"])
        weights, biases = [], []
        for shape in header["shapes"]:
            fan_in, fan_out = int(shape[0]), int(shape[1])
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype=float).reshape(fan_in, fan_out)
            b = np.frombuffer(fh.read(8 * fan_out), dtype=float)
            weights.append(w.copy())
            biases.append(b.copy())
    return MlpModel(arch, int(header["input_dim"]), weights, biases)
