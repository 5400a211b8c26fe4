"""Trainable time-series classifiers over loss curves: KNN-DTW, TSF, SAX-VSM.

All three share the same input pipeline: a curve is resampled to the model's
canonical length (KNN-DTW may skip this and keep variable lengths) and then
optionally z-normalized. Trained models are immutable; ``predict`` is a pure
function of (model, curve).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from statistics import NormalDist

import numpy as np

from .dtw import DtwMode, DtwParams, dtw_distance
from .errors import (
    DegenerateTraining,
    InvalidInput,
    ModelFormatError,
    StratificationError,
)
from .evaluation import macro_f
from .history import LossCurve, OverfitLabel, resample_linear, z_normalize

__all__ = [
    "Normalization",
    "ClassifierKind",
    "KnnDtwParams",
    "TsfParams",
    "SaxVsmParams",
    "KnnDtwModel",
    "TsfModel",
    "SaxVsmModel",
    "CvReport",
    "fit",
    "predict",
    "grid_search_cv",
    "default_grid",
    "sax_breakpoints",
    "save_model",
    "load_model",
    "MODEL_SCHEMA_VERSION",
]

MODEL_SCHEMA_VERSION = 1
DEFAULT_CANONICAL_LEN = 100


class Normalization(Enum):
    NONE = "none"
    ZNORM = "znorm"


class ClassifierKind(Enum):
    KNN_DTW = "knn_dtw"
    TSF = "tsf"
    SAX_VSM = "sax_vsm"


@dataclass(frozen=True)
class KnnDtwParams:
    k: int = 1
    dtw: DtwParams = DtwParams()

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise InvalidInput("k must be an odd positive integer")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "dtw": {
                "radius": self.dtw.radius,
                "mode": self.dtw.mode.value,
                "squared": self.dtw.squared,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KnnDtwParams":
        dtw = doc.get("dtw", {})
        return cls(
            k=doc.get("k", 1),
            dtw=DtwParams(
                radius=dtw.get("radius", 10),
                mode=DtwMode(dtw.get("mode", "fast")),
                squared=dtw.get("squared", False),
            ),
        )


@dataclass(frozen=True)
class TsfParams:
    n_trees: int = 100
    min_interval: int = 3
    max_depth: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidInput("n_trees must be positive")
        if self.min_interval < 3:
            raise InvalidInput("min_interval must be >= 3")
        if self.max_depth is not None and self.max_depth < 1:
            raise InvalidInput("max_depth must be positive or None")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "min_interval": self.min_interval,
            "max_depth": self.max_depth,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TsfParams":
        return cls(
            n_trees=doc.get("n_trees", 100),
            min_interval=doc.get("min_interval", 3),
            max_depth=doc.get("max_depth"),
            rng_seed=doc.get("rng_seed", 0),
        )


@dataclass(frozen=True)
class SaxVsmParams:
    word_size: int = 4
    alphabet_size: int = 4
    window_len: int = 25

    def __post_init__(self):
        if self.word_size < 2:
            raise InvalidInput("word_size must be >= 2")
        if not 2 <= self.alphabet_size <= 10:
            raise InvalidInput("alphabet_size must be in [2, 10]")
        if self.window_len < self.word_size:
            raise InvalidInput("window_len must be >= word_size")

    def to_dict(self) -> dict:
        return {
            "word_size": self.word_size,
            "alphabet_size": self.alphabet_size,
            "window_len": self.window_len,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SaxVsmParams":
        return cls(
            word_size=doc.get("word_size", 4),
            alphabet_size=doc.get("alphabet_size", 4),
            window_len=doc.get("window_len", 25),
        )


def _prepare_values(
    curve: LossCurve, canonical_len: int | None, normalization: Normalization
) -> np.ndarray:
    if canonical_len is not None:
        curve = resample_linear(curve, canonical_len)
    if normalization is Normalization.ZNORM:
        curve = z_normalize(curve)
    return curve.values


def _vote_label(overfit_score: float) -> OverfitLabel:
    # Ties break toward NonOverfit: conservative for online prevention.
    return OverfitLabel.OVERFIT if overfit_score > 0.5 else OverfitLabel.NON_OVERFIT


# --------------------------------------------------------------------------
# KNN-DTW
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KnnDtwModel:
    params: KnnDtwParams
    normalization: Normalization
    canonical_len: int | None
    train_values: tuple[np.ndarray, ...]
    train_labels: tuple[OverfitLabel, ...]

    kind = ClassifierKind.KNN_DTW

    def predict(self, curve: LossCurve) -> tuple[OverfitLabel, float]:
        q = _prepare_values(curve, self.canonical_len, self.normalization)
        dists = np.array(
            [dtw_distance(q, t, self.params.dtw) for t in self.train_values]
        )
        nearest = np.argsort(dists, kind="stable")[: self.params.k]
        votes = sum(
            1 for i in nearest if self.train_labels[i] is OverfitLabel.OVERFIT
        )
        score = votes / self.params.k
        return _vote_label(score), score

    def to_model_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "normalization": self.normalization.value,
            "canonical_len": self.canonical_len,
            "params": self.params.to_dict(),
            "state": {
                "curves": [list(map(float, v)) for v in self.train_values],
                "labels": [l.value for l in self.train_labels],
            },
        }

    @classmethod
    def from_model_dict(cls, doc: dict) -> "KnnDtwModel":
        state = doc["state"]
        return cls(
            params=KnnDtwParams.from_dict(doc["params"]),
            normalization=Normalization(doc["normalization"]),
            canonical_len=doc["canonical_len"],
            train_values=tuple(np.array(c, dtype=np.float64) for c in state["curves"]),
            train_labels=tuple(OverfitLabel(l) for l in state["labels"]),
        )


def _fit_knn(params, prepared, labels, normalization, canonical_len):
    if params.k > len(prepared):
        raise InvalidInput("k exceeds the training-set size")
    return KnnDtwModel(
        params=params,
        normalization=normalization,
        canonical_len=canonical_len,
        train_values=tuple(prepared),
        train_labels=tuple(labels),
    )


# --------------------------------------------------------------------------
# Time Series Forest
# --------------------------------------------------------------------------


def _interval_features(values: np.ndarray, intervals: np.ndarray) -> np.ndarray:
    feats = np.empty(3 * len(intervals))
    for idx, (start, length) in enumerate(intervals):
        seg = values[start : start + length]
        x = np.arange(length, dtype=np.float64)
        xm = x.mean()
        ym = seg.mean()
        denom = ((x - xm) ** 2).sum()
        slope = float(((x - xm) * (seg - ym)).sum() / denom) if denom else 0.0
        feats[3 * idx] = ym
        feats[3 * idx + 1] = seg.std()
        feats[3 * idx + 2] = slope
    return feats


def _gini_best_split(xcol: np.ndarray, y: np.ndarray):
    """Best threshold for one feature by weighted Gini; None when unsplittable."""
    order = np.argsort(xcol, kind="stable")
    xs = xcol[order]
    ys = y[order]
    n = len(ys)
    c1 = np.cumsum(ys)[:-1]
    n_left = np.arange(1, n)
    c0 = n_left - c1
    total1 = ys.sum()
    r1 = total1 - c1
    n_right = n - n_left
    r0 = n_right - r1
    gini_l = 1.0 - (c1 / n_left) ** 2 - (c0 / n_left) ** 2
    gini_r = 1.0 - (r1 / n_right) ** 2 - (r0 / n_right) ** 2
    weighted = (n_left * gini_l + n_right * gini_r) / n
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    weighted = np.where(valid, weighted, np.inf)
    best = int(np.argmin(weighted))
    threshold = (xs[best] + xs[best + 1]) / 2.0
    return float(weighted[best]), threshold


def _build_tree(X: np.ndarray, y: np.ndarray, max_depth: int | None, depth: int = 0):
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0 or len(y) < 2 or (max_depth is not None and depth >= max_depth):
        return {"leaf": [n0, n1]}
    best = None
    for f in range(X.shape[1]):
        split = _gini_best_split(X[:, f], y)
        if split is None:
            continue
        impurity, threshold = split
        if best is None or impurity < best[0]:
            best = (impurity, f, threshold)
    if best is None:
        return {"leaf": [n0, n1]}
    _, f, threshold = best
    mask = X[:, f] <= threshold
    return {
        "feature": f,
        "threshold": threshold,
        "left": _build_tree(X[mask], y[mask], max_depth, depth + 1),
        "right": _build_tree(X[~mask], y[~mask], max_depth, depth + 1),
    }


def _tree_vote(node: dict, feats: np.ndarray) -> int:
    while "leaf" not in node:
        node = node["left"] if feats[node["feature"]] <= node["threshold"] else node["right"]
    n0, n1 = node["leaf"]
    return 1 if n1 > n0 else 0


@dataclass(frozen=True)
class TsfModel:
    params: TsfParams
    normalization: Normalization
    canonical_len: int
    trees: tuple[tuple[np.ndarray, dict], ...]  # (intervals, root) per tree

    kind = ClassifierKind.TSF

    def predict(self, curve: LossCurve) -> tuple[OverfitLabel, float]:
        values = _prepare_values(curve, self.canonical_len, self.normalization)
        votes = sum(
            _tree_vote(root, _interval_features(values, intervals))
            for intervals, root in self.trees
        )
        score = votes / len(self.trees)
        return _vote_label(score), score

    def to_model_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "normalization": self.normalization.value,
            "canonical_len": self.canonical_len,
            "params": self.params.to_dict(),
            "state": {
                "trees": [
                    {"intervals": [[int(s), int(l)] for s, l in intervals], "root": root}
                    for intervals, root in self.trees
                ]
            },
        }

    @classmethod
    def from_model_dict(cls, doc: dict) -> "TsfModel":
        trees = tuple(
            (np.array(t["intervals"], dtype=np.int64), t["root"])
            for t in doc["state"]["trees"]
        )
        return cls(
            params=TsfParams.from_dict(doc["params"]),
            normalization=Normalization(doc["normalization"]),
            canonical_len=doc["canonical_len"],
            trees=trees,
        )


def _sample_intervals(length: int, min_interval: int, rng: np.random.Generator):
    count = math.ceil(math.sqrt(length))
    intervals = np.empty((count, 2), dtype=np.int64)
    for i in range(count):
        start = int(rng.integers(0, length - min_interval + 1))
        seg_len = int(rng.integers(min_interval, length - start + 1))
        intervals[i] = (start, seg_len)
    return intervals


def _fit_tsf(params, prepared, labels, normalization, canonical_len):
    if params.min_interval > canonical_len:
        raise InvalidInput("min_interval exceeds canonical_len")
    y = np.array([1 if l is OverfitLabel.OVERFIT else 0 for l in labels])
    seeds = np.random.SeedSequence(params.rng_seed).spawn(params.n_trees)
    trees = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        intervals = _sample_intervals(canonical_len, params.min_interval, rng)
        X = np.stack([_interval_features(v, intervals) for v in prepared])
        trees.append((intervals, _build_tree(X, y, params.max_depth)))
    return TsfModel(
        params=params,
        normalization=normalization,
        canonical_len=canonical_len,
        trees=tuple(trees),
    )


# --------------------------------------------------------------------------
# SAX-VSM
# --------------------------------------------------------------------------


def sax_breakpoints(alphabet_size: int) -> np.ndarray:
    """Standard-normal quantile breakpoints splitting N(0,1) into equal bins."""
    nd = NormalDist()
    return np.array(
        [nd.inv_cdf(i / alphabet_size) for i in range(1, alphabet_size)]
    )


def _paa(values: np.ndarray, segments: int) -> np.ndarray:
    # Repeating each point `segments` times makes fractional boundaries exact.
    n = len(values)
    return np.repeat(values, segments).reshape(segments, n).mean(axis=1)


def _sax_words(values: np.ndarray, params: SaxVsmParams, breakpoints: np.ndarray):
    """Sliding-window SAX words with per-window z-normalization and
    numerosity reduction (consecutive duplicates skipped)."""
    words = []
    previous = None
    w = params.window_len
    for start in range(0, len(values) - w + 1):
        window = values[start : start + w]
        sd = window.std()
        normed = (window - window.mean()) / sd if sd > 0 else np.zeros(w)
        symbols = np.searchsorted(breakpoints, _paa(normed, params.word_size), side="right")
        word = "".join(chr(ord("a") + s) for s in symbols)
        if word != previous:
            words.append(word)
            previous = word
    return words


@dataclass(frozen=True)
class SaxVsmModel:
    params: SaxVsmParams
    normalization: Normalization
    canonical_len: int
    class_weights: dict[OverfitLabel, dict[str, float]]

    kind = ClassifierKind.SAX_VSM

    def _similarities(self, curve: LossCurve) -> dict[OverfitLabel, float]:
        values = _prepare_values(curve, self.canonical_len, self.normalization)
        breakpoints = sax_breakpoints(self.params.alphabet_size)
        words = _sax_words(values, self.params, breakpoints)
        counts: dict[str, int] = {}
        for word in words:
            counts[word] = counts.get(word, 0) + 1
        sims = {}
        q_norm = math.sqrt(sum(c * c for c in counts.values()))
        for label, weights in self.class_weights.items():
            dot = sum(weights.get(word, 0.0) * c for word, c in counts.items())
            w_norm = math.sqrt(sum(w * w for w in weights.values()))
            sims[label] = dot / (q_norm * w_norm) if q_norm and w_norm else 0.0
        return sims

    def predict(self, curve: LossCurve) -> tuple[OverfitLabel, float]:
        sims = self._similarities(curve)
        s_over = sims[OverfitLabel.OVERFIT]
        s_non = sims[OverfitLabel.NON_OVERFIT]
        total = s_over + s_non
        margin = (s_over - s_non) / total if total > 0 else 0.0
        score = 0.5 * (1.0 + margin)
        label = OverfitLabel.OVERFIT if s_over > s_non else OverfitLabel.NON_OVERFIT
        return label, score

    def to_model_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "normalization": self.normalization.value,
            "canonical_len": self.canonical_len,
            "params": self.params.to_dict(),
            "state": {
                "weights": {
                    label.value: weights
                    for label, weights in self.class_weights.items()
                }
            },
        }

    @classmethod
    def from_model_dict(cls, doc: dict) -> "SaxVsmModel":
        weights = {
            OverfitLabel(label): {w: float(x) for w, x in table.items()}
            for label, table in doc["state"]["weights"].items()
        }
        return cls(
            params=SaxVsmParams.from_dict(doc["params"]),
            normalization=Normalization(doc["normalization"]),
            canonical_len=doc["canonical_len"],
            class_weights=weights,
        )


def _fit_sax(params, prepared, labels, normalization, canonical_len):
    if params.window_len > canonical_len:
        raise InvalidInput("window_len exceeds canonical_len")
    breakpoints = sax_breakpoints(params.alphabet_size)
    bags: dict[OverfitLabel, dict[str, int]] = {
        OverfitLabel.OVERFIT: {},
        OverfitLabel.NON_OVERFIT: {},
    }
    for values, label in zip(prepared, labels):
        bag = bags[label]
        for word in _sax_words(values, params, breakpoints):
            bag[word] = bag.get(word, 0) + 1
    vocabulary = set()
    for bag in bags.values():
        vocabulary.update(bag)
    n_classes = len(bags)
    weights: dict[OverfitLabel, dict[str, float]] = {}
    for label, bag in bags.items():
        table = {}
        for word in vocabulary:
            tf = bag.get(word, 0)
            if tf == 0:
                continue
            df = sum(1 for other in bags.values() if word in other)
            weight = (1.0 + math.log(tf)) * math.log(n_classes / df)
            if weight != 0.0:
                table[word] = weight
        weights[label] = table
    return SaxVsmModel(
        params=params,
        normalization=normalization,
        canonical_len=canonical_len,
        class_weights=weights,
    )


# --------------------------------------------------------------------------
# Shared fit / predict / grid search / serialization
# --------------------------------------------------------------------------


def fit(
    kind: ClassifierKind,
    params,
    data: list[tuple[LossCurve, OverfitLabel]],
    canonical_len: int | None = DEFAULT_CANONICAL_LEN,
    normalization: Normalization = Normalization.ZNORM,
):
    """Train a classifier on (curve, label) pairs.

    Labels must be Overfit/NonOverfit only, with at least two examples per
    class. ``canonical_len=None`` (variable length) is only valid for KNN-DTW.
    """
    labels = [label for _, label in data]
    if any(l is OverfitLabel.UNCERTAIN for l in labels):
        raise InvalidInput("uncertain-labelled curves cannot be trained on")
    counts = {c: labels.count(c) for c in (OverfitLabel.OVERFIT, OverfitLabel.NON_OVERFIT)}
    if min(counts.values()) == 0:
        raise DegenerateTraining("training data contains a single class")
    if canonical_len is None and kind is not ClassifierKind.KNN_DTW:
        raise InvalidInput("only KNN-DTW supports variable-length input")
    prepared = [_prepare_values(curve, canonical_len, normalization) for curve, _ in data]
    if kind is ClassifierKind.KNN_DTW:
        return _fit_knn(params, prepared, labels, normalization, canonical_len)
    if kind is ClassifierKind.TSF:
        return _fit_tsf(params, prepared, labels, normalization, canonical_len)
    if kind is ClassifierKind.SAX_VSM:
        return _fit_sax(params, prepared, labels, normalization, canonical_len)
    raise InvalidInput(f"unknown classifier kind {kind!r}")


def predict(model, curve: LossCurve) -> tuple[OverfitLabel, float]:
    return model.predict(curve)


@dataclass(frozen=True)
class CvReport:
    kind: ClassifierKind
    candidates: tuple
    scores: tuple[float, ...]
    best_index: int
    fold_assignments: tuple[int, ...]
    seed: int

    @property
    def best_params(self):
        return self.candidates[self.best_index]

    @property
    def best_score(self) -> float:
        return self.scores[self.best_index]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "candidates": [c.to_dict() for c in self.candidates],
            "mean_cv_f": list(self.scores),
            "best_index": self.best_index,
            "fold_assignments": list(self.fold_assignments),
            "seed": self.seed,
        }


def _stratified_folds(labels, seed: int, n_folds: int = 3) -> np.ndarray:
    fold = np.empty(len(labels), dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in (OverfitLabel.OVERFIT, OverfitLabel.NON_OVERFIT):
        idxs = np.array([i for i, l in enumerate(labels) if l is cls], dtype=np.int64)
        if len(idxs) < n_folds:
            raise StratificationError(
                f"class {cls.value} has {len(idxs)} examples; need >= {n_folds}"
            )
        rng.shuffle(idxs)
        for pos, i in enumerate(idxs):
            fold[i] = pos % n_folds
    return fold


def grid_search_cv(
    kind: ClassifierKind,
    grid: list,
    data: list[tuple[LossCurve, OverfitLabel]],
    seed: int = 0,
    canonical_len: int | None = DEFAULT_CANONICAL_LEN,
    normalization: Normalization = Normalization.ZNORM,
) -> CvReport:
    """Stratified 3-fold CV over every candidate; selects the best mean macro
    F-score, breaking ties toward the earliest candidate in grid order."""
    if not grid:
        raise InvalidInput("grid must be non-empty")
    labels = [label for _, label in data]
    fold = _stratified_folds(labels, seed)
    scores = []
    for params in grid:
        fold_scores = []
        for f in range(3):
            train = [d for i, d in enumerate(data) if fold[i] != f]
            test = [(i, d) for i, d in enumerate(data) if fold[i] == f]
            model = fit(kind, params, train, canonical_len, normalization)
            y_true = [label for _, (_, label) in test]
            y_pred = [model.predict(curve)[0] for _, (curve, _) in test]
            fold_scores.append(macro_f(y_true, y_pred))
        scores.append(sum(fold_scores) / len(fold_scores))
    best_index = 0
    for i, s in enumerate(scores):
        if s > scores[best_index]:
            best_index = i
    return CvReport(
        kind=kind,
        candidates=tuple(grid),
        scores=tuple(scores),
        best_index=best_index,
        fold_assignments=tuple(int(f) for f in fold),
        seed=seed,
    )


def default_grid(kind: ClassifierKind, canonical_len: int = DEFAULT_CANONICAL_LEN) -> list:
    if kind is ClassifierKind.KNN_DTW:
        return [
            KnnDtwParams(k=k, dtw=DtwParams(radius=r))
            for k in (1, 3, 5)
            for r in (5, 10, 20)
        ]
    if kind is ClassifierKind.TSF:
        return [
            TsfParams(n_trees=n, min_interval=mi)
            for n in (100, 300)
            for mi in (3, 8)
        ]
    if kind is ClassifierKind.SAX_VSM:
        return [
            SaxVsmParams(word_size=w, alphabet_size=a, window_len=wl)
            for w in (4, 8)
            for a in (3, 4, 6)
            for wl in (canonical_len // 4, canonical_len // 2)
        ]
    raise InvalidInput(f"unknown classifier kind {kind!r}")


_MODEL_CLASSES = {
    ClassifierKind.KNN_DTW.value: KnnDtwModel,
    ClassifierKind.TSF.value: TsfModel,
    ClassifierKind.SAX_VSM.value: SaxVsmModel,
}


def save_model(model, path) -> None:
    """Write any model (classifier or detector) to the JSON container."""
    doc = {"schema_version": MODEL_SCHEMA_VERSION}
    doc.update(model.to_model_dict())
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_model(path):
    """Read a model back from the JSON container; kind-discriminated."""
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"model schema version {version!r} is not supported "
            f"(supported: {MODEL_SCHEMA_VERSION})"
        )
    kind = doc.get("kind")
    try:
        if kind in _MODEL_CLASSES:
            return _MODEL_CLASSES[kind].from_model_dict(doc)
        if kind in ("correlation_threshold", "heuristic"):
            from . import detectors

            return detectors.model_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model state: {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")
