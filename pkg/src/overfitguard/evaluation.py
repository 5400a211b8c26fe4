"""Metrics and statistics: precision/recall/F, prevention stats, Mann-Whitney U,
Cliff's delta, and report assembly."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSample
from .history import OverfitLabel, TrainingHistory

__all__ = [
    "ClassMetrics",
    "ConfusionCounts",
    "PrfReport",
    "f_score",
    "prf",
    "rank_average",
    "MannWhitneyResult",
    "mann_whitney_u",
    "CliffsDeltaResult",
    "cliffs_delta",
    "DetectionEvaluation",
    "evaluate_detection",
    "StrategySpec",
    "PreventionStats",
    "SignificanceEntry",
    "PreventionEvaluation",
    "evaluate_prevention",
    "EvalReport",
]

_CLASSES = (OverfitLabel.OVERFIT, OverfitLabel.NON_OVERFIT)


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class true-positive / false-positive / false-negative counts."""

    tp: dict[OverfitLabel, int]
    fp: dict[OverfitLabel, int]
    fn: dict[OverfitLabel, int]

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        if len(y_true) != len(y_pred):
            raise InvalidSample("y_true and y_pred must align")
        tp = {c: 0 for c in _CLASSES}
        fp = {c: 0 for c in _CLASSES}
        fn = {c: 0 for c in _CLASSES}
        for t, p in zip(y_true, y_pred):
            if t == p:
                tp[t] += 1
            else:
                fp[p] += 1
                fn[t] += 1
        return cls(tp, fp, fn)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f: float


@dataclass(frozen=True)
class PrfReport:
    per_class: dict[OverfitLabel, ClassMetrics]
    macro_f: float


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf(counts: ConfusionCounts) -> PrfReport:
    """Per-class precision/recall/F with zero-denominator conventions, plus
    the macro (unweighted mean) F over the two classes."""
    per_class = {}
    for c in _CLASSES:
        tp, fp, fn = counts.tp[c], counts.fp[c], counts.fn[c]
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = ClassMetrics(p, r, f_score(p, r))
    macro = sum(m.f for m in per_class.values()) / len(per_class)
    return PrfReport(per_class, macro)


def macro_f(y_true, y_pred) -> float:
    return prf(ConfusionCounts.from_predictions(y_true, y_pred)).macro_f


# --------------------------------------------------------------------------
# Rank statistics
# --------------------------------------------------------------------------


def rank_average(values) -> np.ndarray:
    """1-based ranks; ties get the average of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p_value: float
    significant: bool


def _exact_u_cdf(u_stat: int, n: int, m: int) -> float:
    """P(U <= u_stat) under the null, by exact counting of rank splits.

    Scans the pooled order statistics from smallest to largest; placing an x
    at a position where ``y_before`` y's precede it adds ``y_before`` wins.
    Integer arithmetic throughout, so the result is exact.
    """
    total_u = n * m
    u_cap = min(u_stat, total_u)
    ways = [[0] * (total_u + 1) for _ in range(n + 1)]
    ways[0][0] = 1
    for pos in range(1, n + m + 1):
        new = [[0] * (total_u + 1) for _ in range(n + 1)]
        for k in range(0, min(n, pos) + 1):
            row = ways[k]
            y_before = pos - 1 - k
            for u in range(0, total_u + 1):
                w = row[u]
                if not w:
                    continue
                if y_before < m:
                    new[k][u] += w
                if k < n:
                    new[k + 1][u + y_before] += w
        ways = new
    counts = ways[n]
    total = math.comb(n + m, n)
    return sum(counts[: u_cap + 1]) / total


def mann_whitney_u(x, y, alpha: float = 0.05) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test.

    Returns the U statistic of ``x`` (pairs where x exceeds y, ties counting
    half). For small tie-free samples (min size <= 8) the p-value is exact;
    otherwise it uses the normal approximation with tie-corrected variance
    and a 0.5 continuity correction.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise InvalidSample("both samples must be non-empty")
    n, m = len(x), len(y)
    pooled = np.concatenate([x, y])
    ranks = rank_average(pooled)
    r_x = ranks[:n].sum()
    u_x = r_x - n * (n + 1) / 2.0
    u_y = n * m - u_x
    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if not has_ties and min(n, m) <= 8:
        u_min = int(round(min(u_x, u_y)))
        p = min(1.0, 2.0 * _exact_u_cdf(u_min, n, m))
    else:
        big_n = n + m
        tie_term = float(np.sum(tie_counts**3 - tie_counts))
        var = n * m / 12.0 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
        if var <= 0.0:
            p = 1.0
        else:
            mu = n * m / 2.0
            diff = u_x - mu
            if abs(diff) <= 0.5:
                z = 0.0
            elif diff > 0:
                z = (diff - 0.5) / math.sqrt(var)
            else:
                z = (diff + 0.5) / math.sqrt(var)
            p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return MannWhitneyResult(float(u_x), p, p < alpha)


_MAGNITUDE_EDGES = ((0.147, "negligible"), (0.33, "small"), (0.474, "medium"))


@dataclass(frozen=True)
class CliffsDeltaResult:
    d: float
    magnitude: str


def cliffs_delta(x, y) -> CliffsDeltaResult:
    """Pairwise dominance effect size in [-1, 1] with Romano magnitude buckets."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise InvalidSample("both samples must be non-empty")
    diff = np.sign(x[:, None] - y[None, :])
    d = float(diff.sum() / (len(x) * len(y)))
    magnitude = "large"
    for edge, name in _MAGNITUDE_EDGES:
        if abs(d) < edge:
            magnitude = name
            break
    return CliffsDeltaResult(d, magnitude)


# --------------------------------------------------------------------------
# Detection / prevention evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionEvaluation:
    name: str
    report: PrfReport
    n_samples: int
    inference_ms_per_sample: float
    train_time_s: float | None = None
    cv_f: float | None = None

    def to_dict(self) -> dict:
        per_class = {
            c.value: {"precision": m.precision, "recall": m.recall, "f": m.f}
            for c, m in self.report.per_class.items()
        }
        return {
            "name": self.name,
            "per_class": per_class,
            "avg_f": self.report.macro_f,
            "cv_f": self.cv_f,
            "n_samples": self.n_samples,
            "inference_ms_per_sample": self.inference_ms_per_sample,
            "train_time_s": self.train_time_s,
        }


def evaluate_detection(
    model,
    labelled: list[tuple[TrainingHistory, OverfitLabel]],
    name: str = "detector",
    train_time_s: float | None = None,
    cv_f: float | None = None,
) -> DetectionEvaluation:
    """Run a detector over a labelled test set and aggregate P/R/F."""
    from .detectors import detect

    pairs = [(h, l) for h, l in labelled if l is not OverfitLabel.UNCERTAIN]
    if not pairs:
        raise InvalidSample("no labelled histories to evaluate")
    y_true = []
    y_pred = []
    t0 = time.perf_counter()
    for history, label in pairs:
        pred, _ = detect(model, history)
        y_true.append(label)
        y_pred.append(pred)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    report = prf(ConfusionCounts.from_predictions(y_true, y_pred))
    return DetectionEvaluation(
        name=name,
        report=report,
        n_samples=len(pairs),
        inference_ms_per_sample=elapsed_ms / len(pairs),
        train_time_s=train_time_s,
        cv_f=cv_f,
    )


@dataclass(frozen=True)
class StrategySpec:
    """A named prevention strategy: config plus an optional classifier model."""

    name: str
    config: "object"
    model: object | None = None


@dataclass(frozen=True)
class PreventionStats:
    name: str
    optimal_rate: float
    delays: tuple[int, ...]
    median_delay: float
    average_accuracy: float | None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "optimal_rate": self.optimal_rate,
            "median_delay": self.median_delay,
            "average_accuracy": self.average_accuracy,
            "n_histories": len(self.delays),
        }


@dataclass(frozen=True)
class SignificanceEntry:
    pair: str
    u: float
    p_value: float
    significant: bool
    cliffs_d: float
    magnitude: str

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "u": self.u,
            "p_value": self.p_value,
            "significant": self.significant,
            "cliffs_d": self.cliffs_d,
            "magnitude": self.magnitude,
        }


@dataclass(frozen=True)
class PreventionEvaluation:
    rows: tuple[PreventionStats, ...]
    significance: tuple[SignificanceEntry, ...]


def _is_early_stop(config) -> bool:
    from .prevention import Strategy

    return config.strategy in (Strategy.EARLY_STOP, Strategy.EARLY_STOP_SMOOTHED)


def _matched(classifier_cfg, es_cfg) -> bool:
    from .prevention import Strategy

    if classifier_cfg.strategy is Strategy.WHOLE_HISTORY:
        return True
    return classifier_cfg.window == es_cfg.patience


def evaluate_prevention(
    strategies: list[StrategySpec],
    histories: list[TrainingHistory],
) -> PreventionEvaluation:
    """Replay every strategy over every history; aggregate stats and compare
    classifier-based delays against early stopping at the matched parameter."""
    from .prevention import replay

    if not histories:
        raise InvalidSample("no histories to replay")
    rows = []
    delays_by_name: dict[str, list[int]] = {}
    for spec in strategies:
        hits = 0
        delays: list[int] = []
        accs: list[float] = []
        for history in histories:
            result = replay(spec.config, spec.model, history)
            hits += int(result.hit_optimal)
            delays.append(result.delay)
            if result.accuracy_at_best is not None:
                accs.append(result.accuracy_at_best)
        rows.append(
            PreventionStats(
                name=spec.name,
                optimal_rate=hits / len(histories),
                delays=tuple(delays),
                median_delay=float(np.median(delays)),
                average_accuracy=float(np.mean(accs)) if accs else None,
            )
        )
        delays_by_name[spec.name] = delays
    significance = []
    for spec in strategies:
        if _is_early_stop(spec.config) or spec.model is None:
            continue
        for other in strategies:
            if not _is_early_stop(other.config):
                continue
            if not _matched(spec.config, other.config):
                continue
            mw = mann_whitney_u(delays_by_name[spec.name], delays_by_name[other.name])
            cd = cliffs_delta(delays_by_name[spec.name], delays_by_name[other.name])
            significance.append(
                SignificanceEntry(
                    pair=f"{spec.name} vs {other.name}",
                    u=mw.u,
                    p_value=mw.p_value,
                    significant=mw.significant,
                    cliffs_d=cd.d,
                    magnitude=cd.magnitude,
                )
            )
    return PreventionEvaluation(tuple(rows), tuple(significance))


# --------------------------------------------------------------------------
# Report assembly
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    detection: list[DetectionEvaluation] = field(default_factory=list)
    prevention: PreventionEvaluation | None = None

    def to_dict(self) -> dict:
        doc: dict = {}
        if self.detection:
            doc["detection"] = [d.to_dict() for d in self.detection]
        if self.prevention is not None:
            doc["prevention"] = [r.to_dict() for r in self.prevention.rows]
            doc["significance"] = [s.to_dict() for s in self.prevention.significance]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_markdown(self) -> str:
        lines: list[str] = []
        if self.detection:
            lines.append("## Detection")
            lines.append("")
            lines.append(
                "| Approach | NonOv P | NonOv R | NonOv F | Ov P | Ov R | Ov F "
                "| Avg F | CV F | Train (s) | Inference (ms) |"
            )
            lines.append("| --- | --- | --- | --- | --- | --- | --- | --- | --- | --- | --- |")
            for d in self.detection:
                non = d.report.per_class[OverfitLabel.NON_OVERFIT]
                ov = d.report.per_class[OverfitLabel.OVERFIT]
                cv = f"{d.cv_f:.2f}" if d.cv_f is not None else "-"
                tr = f"{d.train_time_s:.3f}" if d.train_time_s is not None else "-"
                lines.append(
                    f"| {d.name} | {non.precision:.2f} | {non.recall:.2f} | {non.f:.2f} "
                    f"| {ov.precision:.2f} | {ov.recall:.2f} | {ov.f:.2f} "
                    f"| {d.report.macro_f:.2f} | {cv} | {tr} | {d.inference_ms_per_sample:.3f} |"
                )
            lines.append("")
        if self.prevention is not None:
            lines.append("## Prevention")
            lines.append("")
            lines.append("| Strategy | Optimal rate | Median delay | Average accuracy |")
            lines.append("| --- | --- | --- | --- |")
            for r in self.prevention.rows:
                acc = f"{r.average_accuracy:.2f}" if r.average_accuracy is not None else "-"
                lines.append(
                    f"| {r.name} | {r.optimal_rate:.2f} | {r.median_delay:.1f} | {acc} |"
                )
            lines.append("")
            if self.prevention.significance:
                lines.append("## Delay significance")
                lines.append("")
                lines.append("| Pair | U | p | Significant | Cliff's d | Magnitude |")
                lines.append("| --- | --- | --- | --- | --- | --- |")
                for s in self.prevention.significance:
                    lines.append(
                        f"| {s.pair} | {s.u:.1f} | {s.p_value:.4f} | {s.significant} "
                        f"| {s.cliffs_d:.3f} | {s.magnitude} |"
                    )
                lines.append("")
        return "\n".join(lines)
