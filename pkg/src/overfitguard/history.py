"""Training-history data types, resampling, smoothing, and file I/O.

Everything here is immutable after construction and safe to share across
threads; the operations are pure functions.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateEpoch,
    InvalidCurve,
    InvalidInput,
    InvalidValue,
    ParseError,
)

__all__ = [
    "OverfitLabel",
    "MetricSource",
    "LossCurve",
    "TrainingHistory",
    "MonitoredSeries",
    "monitored_series",
    "resample_linear",
    "moving_average",
    "z_normalize",
    "read_history_csv",
    "write_history_csv",
    "read_labels_csv",
    "write_labels_csv",
    "ManifestEntry",
    "load_manifest",
    "write_manifest",
    "load_labelled_histories",
]

# Floats are serialized with 17 significant digits, which round-trips IEEE
# doubles exactly.
FLOAT_FORMAT = "%.17g"


class OverfitLabel(Enum):
    OVERFIT = "overfit"
    NON_OVERFIT = "non_overfit"
    UNCERTAIN = "uncertain"


class MetricSource(Enum):
    VAL_LOSS = "val_loss"
    ZERO_ONE_LOSS = "zero_one_loss"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LossCurve:
    """One ordered epoch -> value series.

    Epochs are non-negative integers, strictly increasing; values are finite.
    """

    epochs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if epochs.ndim != 1 or values.ndim != 1 or len(epochs) != len(values):
            raise InvalidCurve("epochs and values must be 1-d and equally long")
        if len(epochs) == 0:
            raise InvalidCurve("a curve needs at least one point")
        if epochs[0] < 0:
            raise InvalidCurve("epochs must be non-negative")
        if len(epochs) > 1 and not np.all(np.diff(epochs) > 0):
            raise InvalidCurve("epochs must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidValue("curve values must be finite")
        object.__setattr__(self, "epochs", _freeze(epochs))
        object.__setattr__(self, "values", _freeze(values))

    @classmethod
    def from_values(cls, values, epochs=None) -> "LossCurve":
        values = np.asarray(values, dtype=np.float64)
        if epochs is None:
            epochs = np.arange(len(values), dtype=np.int64)
        return cls(epochs, values)

    def __len__(self) -> int:
        return len(self.epochs)

    def value_at(self, epoch: int) -> float:
        idx = np.searchsorted(self.epochs, epoch)
        if idx >= len(self.epochs) or self.epochs[idx] != epoch:
            raise InvalidInput(f"epoch {epoch} not present in curve")
        return float(self.values[idx])


@dataclass(frozen=True)
class TrainingHistory:
    """Epoch-aligned train/validation loss curves plus metadata."""

    id: str
    train_loss: LossCurve
    val_loss: LossCurve
    val_accuracy: LossCurve | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not np.array_equal(self.train_loss.epochs, self.val_loss.epochs):
            raise InvalidCurve("train_loss and val_loss must cover the same epochs")
        if self.val_accuracy is not None:
            if not np.array_equal(self.val_accuracy.epochs, self.val_loss.epochs):
                raise InvalidCurve("val_accuracy must cover val_loss's epochs")
            acc = self.val_accuracy.values
            if np.any(acc < 0.0) or np.any(acc > 1.0):
                raise InvalidValue("val_accuracy values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.val_loss)


@dataclass(frozen=True)
class MonitoredSeries:
    """The curve an online monitor watches, tagged with its source."""

    source: MetricSource
    curve: LossCurve


def monitored_series(history: TrainingHistory, source: MetricSource) -> MonitoredSeries:
    """Select the monitored curve: validation loss or zero-one loss (1 - accuracy)."""
    if source is MetricSource.VAL_LOSS:
        return MonitoredSeries(source, history.val_loss)
    if history.val_accuracy is None:
        raise InvalidInput("zero-one loss requires a val_accuracy curve")
    curve = LossCurve(history.val_accuracy.epochs, 1.0 - history.val_accuracy.values)
    return MonitoredSeries(source, curve)


def resample_linear(curve: LossCurve, target_len: int) -> LossCurve:
    """Linearly interpolate a curve onto ``target_len`` uniformly spaced points.

    The output has epochs ``0 .. target_len - 1``; endpoints are preserved
    exactly. Interpolation runs over the input's epoch values, so non-uniform
    epoch spacing is respected.
    """
    if target_len < 2:
        raise InvalidInput("target_len must be >= 2")
    if len(curve) < 2:
        raise InvalidCurve("resampling needs at least two points")
    xs = curve.epochs.astype(np.float64)
    xi = np.linspace(xs[0], xs[-1], target_len)
    vals = np.interp(xi, xs, curve.values)
    return LossCurve(np.arange(target_len, dtype=np.int64), vals)


def moving_average(curve: LossCurve, window: int) -> LossCurve:
    """Trailing (causal) moving average; the prefix uses the points available."""
    if window < 1:
        raise InvalidInput("window must be >= 1")
    v = curve.values
    n = len(v)
    out = np.empty(n)
    csum = np.cumsum(v)
    head = min(window, n)
    out[:head] = csum[:head] / np.arange(1, head + 1)
    if n > window:
        out[window:] = (csum[window:] - csum[:-window]) / window
    return LossCurve(curve.epochs, out)


def z_normalize(curve: LossCurve) -> LossCurve:
    """Shift/scale to zero mean, unit population standard deviation.

    A constant curve maps to all zeros instead of raising, so plateaus in
    real histories cannot crash downstream classifiers.
    """
    if len(curve) < 2:
        raise InvalidCurve("z-normalization needs at least two points")
    v = curve.values
    sd = v.std()
    if sd == 0.0:
        return LossCurve(curve.epochs, np.zeros_like(v))
    return LossCurve(curve.epochs, (v - v.mean()) / sd)


# --------------------------------------------------------------------------
# History CSV I/O
#
# Format: header `epoch,train_loss,val_loss` with an optional trailing
# `val_acc` column, UTF-8, '.' decimal point, rows sortable by epoch.
# --------------------------------------------------------------------------

_HEADER = ("epoch", "train_loss", "val_loss")
_HEADER_ACC = _HEADER + ("val_acc",)


def _parse_epoch(text: str, line_no: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"bad epoch {text!r}", line_no) from None


def _parse_float(text: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"bad value {text!r}", line_no) from None
    if not math.isfinite(value):
        raise InvalidValue(f"line {line_no}: non-finite value {text!r}")
    return value


def read_history_csv(path, history_id: str | None = None) -> TrainingHistory:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    header = tuple(part.strip() for part in lines[0].split(","))
    if header == _HEADER:
        has_acc = False
    elif header == _HEADER_ACC:
        has_acc = True
    else:
        raise ParseError(f"unexpected header {lines[0]!r}", 1)
    n_cols = len(header)
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        parts = line.split(",")
        if len(parts) != n_cols:
            raise ParseError(f"expected {n_cols} columns, got {len(parts)}", line_no)
        epoch = _parse_epoch(parts[0].strip(), line_no)
        if epoch < 0:
            raise ParseError(f"negative epoch {epoch}", line_no)
        values = [_parse_float(p.strip(), line_no) for p in parts[1:]]
        rows.append((epoch, values))
    if not rows:
        raise ParseError("no data rows", 1)
    rows.sort(key=lambda r: r[0])
    epochs = np.array([r[0] for r in rows], dtype=np.int64)
    dupes = epochs[1:][np.diff(epochs) == 0]
    if dupes.size:
        raise DuplicateEpoch(f"duplicate epoch {int(dupes[0])}")
    train = np.array([r[1][0] for r in rows])
    val = np.array([r[1][1] for r in rows])
    acc_curve = None
    if has_acc:
        acc = np.array([r[1][2] for r in rows])
        if np.any(acc < 0.0) or np.any(acc > 1.0):
            raise InvalidValue("val_acc values must lie in [0, 1]")
        acc_curve = LossCurve(epochs, acc)
    return TrainingHistory(
        id=history_id if history_id is not None else path.stem,
        train_loss=LossCurve(epochs, train),
        val_loss=LossCurve(epochs, val),
        val_accuracy=acc_curve,
    )


def write_history_csv(history: TrainingHistory, path) -> None:
    has_acc = history.val_accuracy is not None
    lines = [",".join(_HEADER_ACC if has_acc else _HEADER)]
    epochs = history.train_loss.epochs
    for i, epoch in enumerate(epochs):
        cells = [
            str(int(epoch)),
            FLOAT_FORMAT % history.train_loss.values[i],
            FLOAT_FORMAT % history.val_loss.values[i],
        ]
        if has_acc:
            cells.append(FLOAT_FORMAT % history.val_accuracy.values[i])
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Labels CSV: header `history_id,label`, label in {overfit, non_overfit,
# uncertain}.
# --------------------------------------------------------------------------


def read_labels_csv(path) -> dict[str, OverfitLabel]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or tuple(p.strip() for p in lines[0].split(",")) != ("history_id", "label"):
        raise ParseError("expected header 'history_id,label'", 1)
    labels: dict[str, OverfitLabel] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError(f"expected 2 columns, got {len(parts)}", line_no)
        try:
            label = OverfitLabel(parts[1])
        except ValueError:
            raise ParseError(f"unknown label {parts[1]!r}", line_no) from None
        labels[parts[0]] = label
    return labels


def write_labels_csv(labels: dict[str, OverfitLabel], path) -> None:
    lines = ["history_id,label"]
    lines += [f"{hid},{label.value}" for hid, label in labels.items()]
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Dataset manifest: a JSON array of {history_path, label} entries, paths
# relative to the manifest file.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    history_path: str
    label: OverfitLabel | None = None
    meta: dict[str, str] = field(default_factory=dict)


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid manifest JSON: {exc}") from None
    if not isinstance(doc, list):
        raise ParseError("manifest must be a JSON array")
    entries = []
    for item in doc:
        if not isinstance(item, dict) or "history_path" not in item:
            raise ParseError("manifest entries need a 'history_path' key")
        raw_label = item.get("label")
        if raw_label is None:
            label = None
        else:
            try:
                label = OverfitLabel(raw_label)
            except ValueError:
                raise ParseError(f"unknown label {raw_label!r}") from None
        rel = item["history_path"]
        resolved = rel if os.path.isabs(rel) else str(path.parent / rel)
        entries.append(ManifestEntry(resolved, label, dict(item.get("meta", {}))))
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> None:
    path = Path(path)
    doc = []
    for e in entries:
        rel = os.path.relpath(e.history_path, path.parent)
        item: dict = {"history_path": rel, "label": e.label.value if e.label else None}
        if e.meta:
            item["meta"] = e.meta
        doc.append(item)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_labelled_histories(path) -> list[tuple[TrainingHistory, OverfitLabel | None]]:
    """Load every (history, label) pair referenced by a manifest."""
    out = []
    for entry in load_manifest(path):
        history = read_history_csv(entry.history_path)
        if entry.meta:
            merged = dict(history.meta)
            merged.update(entry.meta)
            history = TrainingHistory(
                history.id, history.train_loss, history.val_loss,
                history.val_accuracy, merged,
            )
        out.append((history, entry.label))
    return out
