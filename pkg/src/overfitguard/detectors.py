"""Post-hoc overfitting detection: correlation baselines with threshold
calibration, the classifier-based detector, and a heuristic labeller."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCalibration,
    InvalidCurve,
    InvalidInput,
    SegmentTooShort,
    UndefinedCorrelation,
)
from .evaluation import ConfusionCounts, prf, rank_average
from .history import OverfitLabel, TrainingHistory

__all__ = [
    "CorrelationKind",
    "ThresholdModel",
    "correlation",
    "calibrate_threshold",
    "detect",
    "HeuristicThresholds",
    "HeuristicModel",
    "HeuristicSearchResult",
    "heuristic_label",
    "heuristic_grid_search",
    "model_from_dict",
]

_THRESHOLD_GRID = [i / 100.0 for i in range(-100, 101)]


@dataclass(frozen=True)
class CorrelationKind:
    """Spearman, Pearson, or Pearson with the training loss lagged behind."""

    name: str
    lag: int = 5

    def __post_init__(self):
        if self.name not in ("spearman", "pearson", "lagged_pearson"):
            raise InvalidInput(f"unknown correlation {self.name!r}")
        if self.lag < 1:
            raise InvalidInput("lag must be a positive integer")

    @classmethod
    def spearman(cls) -> "CorrelationKind":
        return cls("spearman")

    @classmethod
    def pearson(cls) -> "CorrelationKind":
        return cls("pearson")

    @classmethod
    def lagged_pearson(cls, lag: int = 5) -> "CorrelationKind":
        return cls("lagged_pearson", lag)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelation("correlation of a constant series is undefined")
    r = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    return max(-1.0, min(1.0, r))


def correlation(kind: CorrelationKind, history: TrainingHistory) -> float:
    """Correlation between the training- and validation-loss curves."""
    t = history.train_loss.values
    v = history.val_loss.values
    n = len(t)
    if kind.name == "lagged_pearson":
        if n < kind.lag + 3:
            raise InvalidCurve(f"need at least lag+3 = {kind.lag + 3} epochs")
        return _pearson(t[: n - kind.lag], v[kind.lag :])
    if n < 3:
        raise InvalidCurve("need at least 3 epochs")
    if kind.name == "spearman":
        return _pearson(rank_average(t), rank_average(v))
    return _pearson(t, v)


@dataclass(frozen=True)
class ThresholdModel:
    """Decision rule: correlation below the threshold means overfit."""

    kind: CorrelationKind
    threshold: float
    train_macro_f: float | None = None

    def __post_init__(self):
        if not -1.0 <= self.threshold <= 1.0:
            raise InvalidInput("threshold must lie in [-1, 1]")

    def to_model_dict(self) -> dict:
        return {
            "kind": "correlation_threshold",
            "normalization": None,
            "canonical_len": None,
            "params": {"correlation": self.kind.name, "lag": self.kind.lag},
            "state": {"threshold": self.threshold, "train_macro_f": self.train_macro_f},
        }

    @classmethod
    def from_model_dict(cls, doc: dict) -> "ThresholdModel":
        params = doc["params"]
        return cls(
            kind=CorrelationKind(params["correlation"], params.get("lag", 5)),
            threshold=doc["state"]["threshold"],
            train_macro_f=doc["state"].get("train_macro_f"),
        )


def _macro_f_at(threshold, corrs, defined, y_true) -> float:
    y_pred = [
        OverfitLabel.OVERFIT if ok and c < threshold else OverfitLabel.NON_OVERFIT
        for c, ok in zip(corrs, defined)
    ]
    return prf(ConfusionCounts.from_predictions(y_true, y_pred)).macro_f


def calibrate_threshold(
    kind: CorrelationKind,
    labelled: list[tuple[TrainingHistory, OverfitLabel]],
) -> ThresholdModel:
    """Scan thresholds over [-1, 1] in 0.01 steps and keep the macro-F
    maximizer (smallest threshold on ties). Histories whose correlation is
    undefined count as NonOverfit predictions at every threshold."""
    pairs = [(h, l) for h, l in labelled if l is not OverfitLabel.UNCERTAIN]
    y_true = [l for _, l in pairs]
    present = set(y_true)
    if len(present) < 2:
        raise DegenerateCalibration("both classes must be present")
    corrs = []
    defined = []
    for history, _ in pairs:
        try:
            corrs.append(correlation(kind, history))
            defined.append(True)
        except UndefinedCorrelation:
            corrs.append(0.0)
            defined.append(False)
    best_t = _THRESHOLD_GRID[0]
    best_f = -1.0
    for t in _THRESHOLD_GRID:
        f = _macro_f_at(t, corrs, defined, y_true)
        if f > best_f:
            best_f = f
            best_t = t
    return ThresholdModel(kind=kind, threshold=best_t, train_macro_f=best_f)


def detect(model, history: TrainingHistory) -> tuple[OverfitLabel, float]:
    """Classify one history with a threshold, heuristic, or classifier model.

    Classifier models see only the validation-loss curve.
    """
    if isinstance(model, ThresholdModel):
        try:
            corr = correlation(model.kind, history)
        except UndefinedCorrelation:
            return OverfitLabel.NON_OVERFIT, 0.0
        label = (
            OverfitLabel.OVERFIT if corr < model.threshold else OverfitLabel.NON_OVERFIT
        )
        return label, min(1.0, abs(corr - model.threshold) / 2.0)
    if isinstance(model, HeuristicModel):
        label = heuristic_label(history, model.thresholds, model.tail_val_direction)
        return label, 1.0 if label is OverfitLabel.OVERFIT else 0.0
    return model.predict(history.val_loss)


# --------------------------------------------------------------------------
# Heuristic labelling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HeuristicThresholds:
    """Fractions of the history inspected by the three heuristic conditions."""

    inc_p: float
    dec_p: float
    gap_p: float

    def __post_init__(self):
        for name in ("inc_p", "dec_p", "gap_p"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise InvalidInput(f"{name} must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"inc_p": self.inc_p, "dec_p": self.dec_p, "gap_p": self.gap_p}


@dataclass(frozen=True)
class HeuristicModel:
    thresholds: HeuristicThresholds
    tail_val_direction: str = "decrease"

    def to_model_dict(self) -> dict:
        return {
            "kind": "heuristic",
            "normalization": None,
            "canonical_len": None,
            "params": {"tail_val_direction": self.tail_val_direction},
            "state": self.thresholds.to_dict(),
        }

    @classmethod
    def from_model_dict(cls, doc: dict) -> "HeuristicModel":
        s = doc["state"]
        return cls(
            thresholds=HeuristicThresholds(s["inc_p"], s["dec_p"], s["gap_p"]),
            tail_val_direction=doc["params"].get("tail_val_direction", "decrease"),
        )


def _slope(epochs: np.ndarray, values: np.ndarray) -> float:
    x = epochs.astype(np.float64)
    xm = x.mean()
    denom = ((x - xm) ** 2).sum()
    if denom == 0.0:
        return 0.0
    return float(((x - xm) * (values - values.mean())).sum() / denom)


def _segment_len(fraction: float, n: int, name: str) -> int:
    if fraction * n < 2.0 - 1e-9:
        raise SegmentTooShort(f"{name} * history length must be >= 2")
    # ceil with a fp guard so 0.1 * 40 does not round up to 5
    return math.ceil(fraction * n - 1e-9)


def heuristic_label(
    history: TrainingHistory,
    thresholds: HeuristicThresholds,
    tail_val_direction: str = "decrease",
) -> OverfitLabel:
    """Three-condition rule: both losses fall early, the tail behaves per the
    configured sense, and the final train/val gap is large relative to their
    sum.

    ``tail_val_direction`` selects whether the tail validation loss must
    decrease (literal rule) or increase (the Fig-1-style signature).
    """
    if tail_val_direction not in ("decrease", "increase"):
        raise InvalidInput("tail_val_direction must be 'decrease' or 'increase'")
    n = len(history)
    if n < 4:
        raise InvalidCurve("heuristic labelling needs at least 4 epochs")
    k1 = _segment_len(thresholds.inc_p, n, "inc_p")
    k2 = _segment_len(thresholds.dec_p, n, "dec_p")
    epochs = history.train_loss.epochs
    t = history.train_loss.values
    v = history.val_loss.values

    head_down = (
        _slope(epochs[:k1], t[:k1]) < 0.0 and _slope(epochs[:k1], v[:k1]) < 0.0
    )
    tail_train_down = _slope(epochs[-k2:], t[-k2:]) < 0.0
    tail_val_slope = _slope(epochs[-k2:], v[-k2:])
    tail_val_ok = tail_val_slope < 0.0 if tail_val_direction == "decrease" else tail_val_slope > 0.0
    gap_large = v[-1] - t[-1] > thresholds.gap_p * (v[-1] + t[-1])

    if head_down and tail_train_down and tail_val_ok and gap_large:
        return OverfitLabel.OVERFIT
    return OverfitLabel.NON_OVERFIT


@dataclass(frozen=True)
class HeuristicSearchResult:
    thresholds: HeuristicThresholds
    macro_f: float
    overfit_precision: float
    overfit_recall: float
    overfit_f: float

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.to_dict(),
            "macro_f": self.macro_f,
            "overfit_precision": self.overfit_precision,
            "overfit_recall": self.overfit_recall,
            "overfit_f": self.overfit_f,
        }


_INC_GRID = [i / 100.0 for i in range(10, 51, 5)]
_GAP_GRID = [i / 100.0 for i in range(1, 51)]


def heuristic_grid_search(
    labelled: list[tuple[TrainingHistory, OverfitLabel]],
    tail_val_direction: str = "decrease",
) -> HeuristicSearchResult:
    """Grid-search inc_p/dec_p in 10..50% (step 5) and gap_p in 1..50%
    (step 1), maximizing the overfit-class F-score; ties go to the
    lexicographically smallest (inc_p, dec_p, gap_p)."""
    pairs = [(h, l) for h, l in labelled if l is not OverfitLabel.UNCERTAIN]
    y_true = [l for _, l in pairs]
    if len(set(y_true)) < 2:
        raise DegenerateCalibration("both classes must be present")
    truth = np.array([l is OverfitLabel.OVERFIT for l in y_true])

    # Precompute, per history: head/tail conditions at each fraction and the
    # relative gap, so the gap_p scan is a vectorized comparison.
    head_ok = np.empty((len(_INC_GRID), len(pairs)), dtype=bool)
    tail_ok = np.empty((len(_INC_GRID), len(pairs)), dtype=bool)
    rel_gap = np.empty(len(pairs))
    for j, (history, _) in enumerate(pairs):
        n = len(history)
        epochs = history.train_loss.epochs
        t = history.train_loss.values
        v = history.val_loss.values
        denom = v[-1] + t[-1]
        rel_gap[j] = (v[-1] - t[-1]) / denom if denom > 0 else -np.inf
        for i, frac in enumerate(_INC_GRID):
            k = _segment_len(frac, n, "inc_p/dec_p")
            head_ok[i, j] = (
                _slope(epochs[:k], t[:k]) < 0.0 and _slope(epochs[:k], v[:k]) < 0.0
            )
            slope_v = _slope(epochs[-k:], v[-k:])
            val_ok = slope_v < 0.0 if tail_val_direction == "decrease" else slope_v > 0.0
            tail_ok[i, j] = _slope(epochs[-k:], t[-k:]) < 0.0 and val_ok

    best = None
    for i1, inc_p in enumerate(_INC_GRID):
        for i2, dec_p in enumerate(_INC_GRID):
            base = head_ok[i1] & tail_ok[i2]
            for gap_p in _GAP_GRID:
                pred = base & (rel_gap > gap_p)
                tp = int(np.sum(pred & truth))
                fp = int(np.sum(pred & ~truth))
                fn = int(np.sum(~pred & truth))
                p = tp / (tp + fp) if tp + fp else 0.0
                r = tp / (tp + fn) if tp + fn else 0.0
                f = 2 * p * r / (p + r) if p + r else 0.0
                if best is None or f > best[0]:
                    best = (f, inc_p, dec_p, gap_p)
    _, inc_p, dec_p, gap_p = best
    thresholds = HeuristicThresholds(inc_p, dec_p, gap_p)
    y_pred = [
        heuristic_label(h, thresholds, tail_val_direction) for h, _ in pairs
    ]
    report = prf(ConfusionCounts.from_predictions(y_true, y_pred))
    overfit = report.per_class[OverfitLabel.OVERFIT]
    return HeuristicSearchResult(
        thresholds=thresholds,
        macro_f=report.macro_f,
        overfit_precision=overfit.precision,
        overfit_recall=overfit.recall,
        overfit_f=overfit.f,
    )


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "correlation_threshold":
        return ThresholdModel.from_model_dict(doc)
    if kind == "heuristic":
        return HeuristicModel.from_model_dict(doc)
    raise InvalidInput(f"unknown detector kind {kind!r}")
