"""Desk-scale generation of labelled training histories.

Two sources: a tiny feedforward-net trainer that overfits small tabular
datasets for real, and a parametric synthetic curve generator whose labels
are known by construction (the oracle used throughout the test suite).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InvalidInput, SchemaError, TrainingDiverged
from .history import LossCurve, OverfitLabel, TrainingHistory

__all__ = [
    "Task",
    "MlpSpec",
    "TabularDataset",
    "SyntheticCurveSpec",
    "ARCHITECTURES",
    "arch_name",
    "derive_seed",
    "MlpNet",
    "train_mlp",
    "simulate_corpus",
    "generate_synthetic",
    "synthetic_corpus",
    "load_tabular_csv",
    "make_toy_dataset",
    "make_xor_dataset",
]

# The 12-network grid: six one-hidden-layer widths and six two-layer combos.
ARCHITECTURES: tuple[tuple[int, ...], ...] = (
    (2,), (4,), (8,), (16,), (24,), (32,),
    (2, 2), (4, 2), (4, 4), (8, 4), (8, 8), (16, 8),
)


def arch_name(hidden: tuple[int, ...]) -> str:
    return "+".join(str(h) for h in hidden)


def derive_seed(root_seed: int, name: str) -> int:
    """Stable 63-bit sub-stream seed from a root seed and a purpose string."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


class Task(Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...]
    task: Task
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidInput("input_dim and output_dim must be positive")
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise InvalidInput("learning_rate and batch_size must be positive")


@dataclass(frozen=True)
class TabularDataset:
    name: str
    features: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        n = len(self.features)
        if len(self.targets) != n:
            raise SchemaError("features and targets must align")
        combined = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if len(np.unique(combined)) != len(combined) or len(combined) != n:
            raise SchemaError("splits must be disjoint and exhaustive")


def _derived_split(n: int, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = round(0.5 * n)
    n_val = round(0.25 * n)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


# --------------------------------------------------------------------------
# Feedforward network with manual backprop (ReLU hidden layers; linear or
# softmax output).
# --------------------------------------------------------------------------


class MlpNet:
    """Weights plus forward/backward passes; exposed so gradients can be
    checked against finite differences."""

    def __init__(self, layer_sizes: list[int], task: Task, rng: np.random.Generator):
        self.task = task
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            r = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> list[np.ndarray]:
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.task is Task.CLASSIFICATION:
                shifted = z - z.max(axis=1, keepdims=True)
                e = np.exp(shifted)
                h = e / e.sum(axis=1, keepdims=True)
            else:
                h = z
            activations.append(h)
        return activations

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        out = self.forward(x)[-1]
        if self.task is Task.CLASSIFICATION:
            eps = 1e-12
            return float(-(y * np.log(out + eps)).sum() / len(x))
        return float(((out - y) ** 2).mean())

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        activations = self.forward(x)
        out = activations[-1]
        batch = len(x)
        if self.task is Task.CLASSIFICATION:
            eps = 1e-12
            loss = float(-(y * np.log(out + eps)).sum() / batch)
            delta = (out - y) / batch
        else:
            loss = float(((out - y) ** 2).mean())
            delta = 2.0 * (out - y) / (batch * y.shape[1])
        grads_w = [np.empty(0)] * len(self.weights)
        grads_b = [np.empty(0)] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = activations[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (activations[i] > 0.0)
        return loss, grads_w, grads_b

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        out = self.forward(x)[-1]
        return float((out.argmax(axis=1) == y.argmax(axis=1)).mean())

    def step(self, grads_w, grads_b, lr: float) -> None:
        for w, g in zip(self.weights, grads_w):
            w -= lr * g
        for b, g in zip(self.biases, grads_b):
            b -= lr * g


def train_mlp(spec: MlpSpec, data: TabularDataset) -> TrainingHistory:
    """Mini-batch SGD training; records per-epoch mean training loss and a
    full validation pass (plus accuracy for classification). Deterministic
    given the seed; non-finite loss raises TrainingDiverged carrying the
    partial history."""
    if data.features.shape[1] != spec.input_dim or data.targets.shape[1] != spec.output_dim:
        raise SchemaError("spec dims do not match the dataset")
    if not np.all(np.isfinite(data.features)) or not np.all(np.isfinite(data.targets)):
        raise SchemaError("dataset contains non-finite values")
    rng = np.random.default_rng(spec.seed)
    sizes = [spec.input_dim, *spec.hidden, spec.output_dim]
    net = MlpNet(sizes, spec.task, rng)
    x_train = data.features[data.train_idx]
    y_train = data.targets[data.train_idx]
    x_val = data.features[data.val_idx]
    y_val = data.targets[data.val_idx]

    history_id = f"{data.name}_{arch_name(spec.hidden)}_s{spec.seed}"
    meta = {
        "dataset": data.name,
        "architecture": arch_name(spec.hidden),
        "seed": str(spec.seed),
        "loss": "cross_entropy" if spec.task is Task.CLASSIFICATION else "mse",
    }
    train_losses: list[float] = []
    val_losses: list[float] = []
    val_accs: list[float] = []

    def partial() -> TrainingHistory | None:
        # only epochs where every recorded series is complete and finite
        k = min(len(train_losses), len(val_losses))
        if spec.task is Task.CLASSIFICATION:
            k = min(k, len(val_accs))
        if k == 0:
            return None
        epochs = np.arange(k, dtype=np.int64)
        return TrainingHistory(
            id=history_id,
            train_loss=LossCurve(epochs, np.array(train_losses[:k])),
            val_loss=LossCurve(epochs, np.array(val_losses[:k])),
            val_accuracy=(
                LossCurve(epochs, np.array(val_accs[:k]))
                if spec.task is Task.CLASSIFICATION
                else None
            ),
            meta=dict(meta, diverged="true"),
        )

    n = len(x_train)
    for _ in range(spec.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            batch = perm[start : start + spec.batch_size]
            loss, gw, gb = net.loss_and_grads(x_train[batch], y_train[batch])
            if not math.isfinite(loss):
                raise TrainingDiverged("training loss became non-finite", partial())
            net.step(gw, gb, spec.learning_rate)
            total += loss * len(batch)
        train_losses.append(total / n)
        val_loss = net.loss(x_val, y_val)
        if not math.isfinite(val_loss):
            raise TrainingDiverged("validation loss became non-finite", partial())
        val_losses.append(val_loss)
        if spec.task is Task.CLASSIFICATION:
            val_accs.append(net.accuracy(x_val, y_val))

    epochs = np.arange(spec.epochs, dtype=np.int64)
    return TrainingHistory(
        id=history_id,
        train_loss=LossCurve(epochs, np.array(train_losses)),
        val_loss=LossCurve(epochs, np.array(val_losses)),
        val_accuracy=(
            LossCurve(epochs, np.array(val_accs))
            if spec.task is Task.CLASSIFICATION
            else None
        ),
        meta=meta,
    )


def simulate_corpus(
    datasets: list[TabularDataset],
    architectures: tuple[tuple[int, ...], ...] = ARCHITECTURES,
    epochs: int = 1000,
    seed: int = 0,
    task: Task = Task.CLASSIFICATION,
    learning_rate: float = 0.01,
    batch_size: int = 32,
) -> list[TrainingHistory]:
    """Train every architecture on every dataset (dataset-major order).

    Diverged runs are kept, flagged with meta['diverged'], never retried.
    """
    histories = []
    for data in datasets:
        for hidden in architectures:
            run_seed = derive_seed(seed, f"{data.name}/{arch_name(hidden)}")
            spec = MlpSpec(
                input_dim=data.features.shape[1],
                output_dim=data.targets.shape[1],
                hidden=hidden,
                task=task,
                learning_rate=learning_rate,
                batch_size=batch_size,
                epochs=epochs,
                seed=run_seed,
            )
            try:
                histories.append(train_mlp(spec, data))
            except TrainingDiverged as exc:
                if exc.history is not None:
                    histories.append(exc.history)
    return histories


# --------------------------------------------------------------------------
# Synthetic curves with oracle labels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticCurveSpec:
    family: OverfitLabel
    length: int = 200
    initial_loss: float = 2.0
    decay_rate: float = 5.0
    onset_fraction: float = 0.5
    divergence_slope: float = 1.5
    plateau: float = 0.2
    noise_sd: float = 0.0
    with_accuracy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.family not in (OverfitLabel.OVERFIT, OverfitLabel.NON_OVERFIT):
            raise InvalidInput("family must be Overfit or NonOverfit")
        if self.length < 50:
            raise InvalidInput("length must be >= 50")
        if self.family is OverfitLabel.OVERFIT and not 0.2 < self.onset_fraction < 0.8:
            raise InvalidInput("onset_fraction must lie in (0.2, 0.8)")
        if self.noise_sd >= 0.2 * self.initial_loss:
            raise InvalidInput("noise_sd must stay below 0.2 * initial loss")


def generate_synthetic(spec: SyntheticCurveSpec) -> tuple[TrainingHistory, OverfitLabel]:
    """One noisy exponential-decay history; the overfit family's validation
    loss turns upward at the onset epoch, reproducing the classic divergence
    signature. The returned label is the generating family."""
    rng = np.random.default_rng(spec.seed)
    n = spec.length
    x = np.linspace(0.0, 1.0, n)
    train_plateau = spec.plateau * 0.5
    train = train_plateau + (spec.initial_loss - train_plateau) * np.exp(
        -spec.decay_rate * x
    )
    val_base = spec.plateau + (spec.initial_loss - spec.plateau) * np.exp(
        -spec.decay_rate * x
    )
    if spec.family is OverfitLabel.OVERFIT:
        onset = int(round(spec.onset_fraction * (n - 1)))
        val = val_base.copy()
        val[onset + 1 :] = val_base[onset] + spec.divergence_slope * (
            x[onset + 1 :] - x[onset]
        )
    else:
        onset = n - 1
        val = val_base
    if spec.noise_sd > 0:
        train = train + rng.normal(0.0, spec.noise_sd, size=n)
        val = val + rng.normal(0.0, spec.noise_sd, size=n)
    epochs = np.arange(n, dtype=np.int64)
    accuracy = None
    if spec.with_accuracy:
        acc = 1.0 - val / (1.5 * spec.initial_loss)
        accuracy = LossCurve(epochs, np.clip(acc, 0.0, 1.0))
    history = TrainingHistory(
        id=f"synthetic_{spec.family.value}_{spec.seed}",
        train_loss=LossCurve(epochs, train),
        val_loss=LossCurve(epochs, val),
        val_accuracy=accuracy,
        meta={
            "dataset": "synthetic",
            "family": spec.family.value,
            "onset_epoch": str(onset),
            "seed": str(spec.seed),
        },
    )
    return history, spec.family


def synthetic_corpus(
    n_curves: int,
    length: int = 200,
    seed: int = 0,
    noise_lo: float = 0.01,
    noise_hi: float = 0.05,
    with_accuracy: bool = False,
    overfit_fraction: float = 0.5,
    mild_fraction: float = 0.3,
) -> list[tuple[TrainingHistory, OverfitLabel]]:
    """A labelled corpus with randomized shape parameters.

    A ``mild_fraction`` of the overfit curves diverge slowly and late, which
    keeps correlation baselines honest without confusing shape-based
    classifiers.
    """
    rng = np.random.default_rng(seed)
    n_overfit = round(overfit_fraction * n_curves)
    out = []
    for i in range(n_curves):
        family = OverfitLabel.OVERFIT if i < n_overfit else OverfitLabel.NON_OVERFIT
        mild = family is OverfitLabel.OVERFIT and rng.random() < mild_fraction
        if mild:
            onset = rng.uniform(0.55, 0.75)
            slope = rng.uniform(0.2, 0.6)
        else:
            onset = rng.uniform(0.25, 0.6)
            slope = rng.uniform(0.8, 2.5)
        spec = SyntheticCurveSpec(
            family=family,
            length=length,
            initial_loss=rng.uniform(1.5, 2.5),
            decay_rate=rng.uniform(3.0, 8.0),
            onset_fraction=onset,
            divergence_slope=slope,
            plateau=rng.uniform(0.1, 0.3),
            noise_sd=rng.uniform(noise_lo, noise_hi),
            with_accuracy=with_accuracy,
            seed=int(rng.integers(0, 2**62)),
        )
        history, label = generate_synthetic(spec)
        history = TrainingHistory(
            id=f"syn{i:04d}",
            train_loss=history.train_loss,
            val_loss=history.val_loss,
            val_accuracy=history.val_accuracy,
            meta=history.meta,
        )
        out.append((history, label))
    return out


# --------------------------------------------------------------------------
# Tabular data loading and built-in toy datasets
# --------------------------------------------------------------------------


def load_tabular_csv(
    path,
    n_inputs: int,
    n_outputs: int,
    split=None,
    seed: int = 0,
    name: str | None = None,
) -> TabularDataset:
    """Rows of floats, inputs then outputs. ``split`` may be a path to a JSON
    {train, val, test} index manifest (respected verbatim) or None for a
    derived 50/25/25 split."""
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_inputs + n_outputs:
                raise SchemaError(
                    f"line {line_no}: expected {n_inputs + n_outputs} columns, "
                    f"got {len(parts)}"
                )
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise SchemaError(f"line {line_no}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in values):
                raise SchemaError(f"line {line_no}: non-finite cell")
            rows.append(values)
    if not rows:
        raise SchemaError("empty dataset")
    arr = np.array(rows)
    features = arr[:, :n_inputs]
    targets = arr[:, n_inputs:]
    if split is None:
        train_idx, val_idx, test_idx = _derived_split(len(arr), seed)
    else:
        if isinstance(split, (str, Path)):
            with open(split, encoding="utf-8") as f:
                split = json.load(f)
        try:
            train_idx = np.array(split["train"], dtype=np.int64)
            val_idx = np.array(split["val"], dtype=np.int64)
            test_idx = np.array(split["test"], dtype=np.int64)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad split manifest: {exc}") from None
    return TabularDataset(
        name=name or path.stem,
        features=features,
        targets=targets,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
    )


def make_xor_dataset(copies: int = 32, noise_sd: float = 0.0, seed: int = 0) -> TabularDataset:
    """The four XOR points duplicated; one-hot targets."""
    rng = np.random.default_rng(seed)
    base_x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float64)
    base_y = np.array([[1, 0], [0, 1], [0, 1], [1, 0]], dtype=np.float64)
    features = np.tile(base_x, (copies, 1))
    targets = np.tile(base_y, (copies, 1))
    if noise_sd > 0:
        features = features + rng.normal(0.0, noise_sd, features.shape)
    train_idx, val_idx, test_idx = _derived_split(len(features), seed)
    return TabularDataset("xor", features, targets, train_idx, val_idx, test_idx)


def make_toy_dataset(n: int = 240, seed: int = 0, n_classes: int = 2) -> TabularDataset:
    """Small Gaussian-blob classification set for demos and the simulator."""
    rng = np.random.default_rng(seed)
    per = n // n_classes
    features = []
    targets = []
    for c in range(n_classes):
        angle = 2.0 * math.pi * c / n_classes
        center = np.array([math.cos(angle), math.sin(angle)]) * 2.0
        features.append(rng.normal(0.0, 0.8, size=(per, 2)) + center)
        onehot = np.zeros((per, n_classes))
        onehot[:, c] = 1.0
        targets.append(onehot)
    features = np.concatenate(features)
    targets = np.concatenate(targets)
    perm = rng.permutation(len(features))
    features = features[perm]
    targets = targets[perm]
    train_idx, val_idx, test_idx = _derived_split(len(features), seed + 1)
    return TabularDataset("toy_blobs", features, targets, train_idx, val_idx, test_idx)
