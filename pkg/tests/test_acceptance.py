"""Acceptance gate: one test per criterion, each printing a PASS line with the
measured numbers once its assertions hold."""

import itertools
import math
import time

import numpy as np
import pytest

from overfitguard.classifiers import ClassifierKind, fit
from overfitguard.detectors import CorrelationKind, calibrate_threshold, heuristic_grid_search
from overfitguard.dtw import DtwParams, dtw_exact, dtw_fast
from overfitguard.evaluation import (
    StrategySpec,
    cliffs_delta,
    evaluate_prevention,
    f_score,
    mann_whitney_u,
    rank_average,
)
from overfitguard.history import MetricSource, OverfitLabel
from overfitguard.prevention import (
    MonitorSession,
    PreventionConfig,
    StopAction,
    Strategy,
    replay,
)
from overfitguard.simulation import MlpNet, Task, make_toy_dataset, synthetic_corpus

OV, NO = OverfitLabel.OVERFIT, OverfitLabel.NON_OVERFIT


def report(name: str, detail: str) -> None:
    print(f"ACCEPTANCE {name}: PASS ({detail})")


def full_dp_oracle(a, b):
    n, m = len(a), len(b)
    inf = float("inf")
    d = [[inf] * (m + 1) for _ in range(n + 1)]
    d[0][0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = abs(a[i - 1] - b[j - 1])
            d[i][j] = cost + min(d[i - 1][j], d[i][j - 1], d[i - 1][j - 1])
    return d[n][m]


def test_dtw_oracle_equivalence():
    rng = np.random.default_rng(2024)
    dtw_fast([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], DtwParams(radius=4))  # JIT warmup
    dtw_exact([0.0, 1.0], [1.0, 0.0])
    start = time.perf_counter()
    worst_gap = 0.0
    for _ in range(200):
        n, m = int(rng.integers(3, 65)), int(rng.integers(3, 65))
        a = np.cumsum(rng.normal(size=n))
        b = np.cumsum(rng.normal(size=m))
        exact = dtw_exact(a, b)
        assert exact == full_dp_oracle(list(a), list(b))
        fast = dtw_fast(a, b, DtwParams(radius=max(n, m)))
        worst_gap = max(worst_gap, abs(fast - exact))
        assert abs(fast - exact) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report("dtw-oracle-equivalence", f"200 pairs, max |fast-exact| {worst_gap:.2e}, {elapsed:.1f}s")


def test_early_stopping_contract():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    for _ in range(100):
        patience = int(rng.integers(1, 60))
        minimum_epoch = int(rng.integers(5, 100))
        head = np.linspace(rng.uniform(2.0, 5.0), 1.0, minimum_epoch + 1)
        tail_len = patience + int(rng.integers(1, 30))
        tail = 1.0 + 1e-3 + np.abs(rng.normal(0, 0.05, tail_len))
        values = np.concatenate([head, tail])
        session = MonitorSession(PreventionConfig(strategy=Strategy.EARLY_STOP, patience=patience))
        stop = None
        for epoch, value in enumerate(values):
            decision = session.observe(epoch, float(value))
            if decision.action is StopAction.STOP:
                stop = decision
                break
        assert stop is not None
        assert stop.stopped_epoch - stop.best_epoch == patience
        assert stop.best_epoch == minimum_epoch
        assert stop.best_value == values[minimum_epoch]
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report("early-stopping-contract", f"100 curves, delay == patience, {elapsed:.1f}s")


def test_detection_at_desk_scale(oracle_corpus, knn_cv):
    knn_f = knn_cv["report"].best_score
    assert knn_f >= 0.95
    spearman = calibrate_threshold(CorrelationKind.spearman(), oracle_corpus)
    assert 0.7 <= spearman.train_macro_f <= 1.0
    assert spearman.train_macro_f <= knn_f
    assert knn_cv["seconds"] < 300.0
    report(
        "detection-at-desk-scale",
        f"KNN-DTW CV F {knn_f:.3f} >= 0.95, Spearman F {spearman.train_macro_f:.3f}, "
        f"{knn_cv['seconds']:.0f}s",
    )


def test_prevention_at_desk_scale(knn_model):
    start = time.perf_counter()
    prevention_curves = [
        h
        for h, label in synthetic_corpus(
            100, length=200, seed=99, noise_lo=0.005, noise_hi=0.03
        )
        if label is OV
    ][:50]
    assert len(prevention_curves) == 50
    specs = [
        StrategySpec(
            "knn-rolling-40",
            PreventionConfig(strategy=Strategy.ROLLING_WINDOW, window=40, step=10),
            knn_model,
        ),
        StrategySpec(
            "es-40", PreventionConfig(strategy=Strategy.EARLY_STOP, patience=40), None
        ),
    ]
    result = evaluate_prevention(specs, prevention_curves)
    rolling, es = result.rows
    assert rolling.median_delay < 40.0
    assert rolling.optimal_rate >= es.optimal_rate - 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    report(
        "prevention-at-desk-scale",
        f"rolling median delay {rolling.median_delay} < 40, optimal rate "
        f"{rolling.optimal_rate:.2f} vs ES {es.optimal_rate:.2f}, {elapsed:.0f}s",
    )


def test_heuristic_ceiling(oracle_corpus, knn_cv):
    start = time.perf_counter()
    result = heuristic_grid_search(oracle_corpus)
    knn_f = knn_cv["report"].best_score
    assert result.overfit_f <= knn_f - 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    report(
        "heuristic-ceiling",
        f"heuristic overfit F {result.overfit_f:.3f} <= KNN CV F {knn_f:.3f} - 0.05, "
        f"{elapsed:.0f}s",
    )


def test_f_arithmetic_fixture():
    value = f_score(0.96, 0.61)
    assert value == pytest.approx(0.746, abs=5e-4)
    assert round(value, 2) == 0.75
    report("f-arithmetic-fixture", f"F(0.96, 0.61) = {value:.4f}")


def test_statistics_oracles():
    start = time.perf_counter()
    # Mann-Whitney: sweep every rank configuration for all sizes up to 7 and
    # compare the exact p-value against a one-pass brute-force distribution.
    checked = 0
    for n in range(1, 8):
        for m in range(n, 8):
            total_u = n * m
            counts = [0] * (total_u + 1)
            configs = []
            for combo in itertools.combinations(range(n + m), n):
                u = sum(c - i for i, c in enumerate(combo))
                counts[u] += 1
                configs.append((combo, u))
            total = math.comb(n + m, n)
            cdf = np.cumsum(counts) / total
            for combo, u in configs:
                u_min = min(u, total_u - u)
                expected = min(1.0, 2.0 * cdf[u_min])
                x = np.array(combo, dtype=float)
                y = np.array(sorted(set(range(n + m)) - set(combo)), dtype=float)
                got = mann_whitney_u(x, y)
                assert abs(got.p_value - expected) <= 1e-9
                assert got.u == u
                checked += 1
    # Cliff's delta against pairwise brute force
    rng = np.random.default_rng(17)
    for _ in range(100):
        x = rng.integers(-5, 6, size=int(rng.integers(1, 20))).astype(float)
        y = rng.integers(-5, 6, size=int(rng.integers(1, 20))).astype(float)
        greater = sum(1 for a in x for b in y if a > b)
        less = sum(1 for a in x for b in y if a < b)
        expected_d = (greater - less) / (len(x) * len(y))
        assert cliffs_delta(x, y).d == pytest.approx(expected_d, abs=1e-12)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(
        "statistics-oracles",
        f"{checked} rank configurations + 100 delta pairs, {elapsed:.1f}s",
    )


def test_mlp_gradient_check():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for trial in range(20):
        task = Task.REGRESSION if trial % 2 == 0 else Task.CLASSIFICATION
        # nets this small stay under 20 parameters
        sizes = [int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3))]
        if task is Task.CLASSIFICATION:
            sizes[-1] = 2
        n_params = sizes[0] * sizes[1] + sizes[1] + sizes[1] * sizes[2] + sizes[2]
        assert n_params <= 20
        net = MlpNet(sizes, task, rng)
        x = rng.normal(size=(5, sizes[0]))
        if task is Task.CLASSIFICATION:
            y = np.zeros((5, sizes[-1]))
            y[np.arange(5), rng.integers(0, sizes[-1], 5)] = 1.0
        else:
            y = rng.normal(size=(5, sizes[-1]))
        _, grads_w, grads_b = net.loss_and_grads(x, y)
        h = 1e-5
        for params, grads in ((net.weights, grads_w), (net.biases, grads_b)):
            for arr, grad in zip(params, grads):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    original = arr[idx]
                    arr[idx] = original + h
                    up = net.loss(x, y)
                    arr[idx] = original - h
                    down = net.loss(x, y)
                    arr[idx] = original
                    numeric = (up - down) / (2.0 * h)
                    denom = max(abs(numeric), abs(grad[idx]), 1e-8)
                    assert abs(numeric - grad[idx]) / denom <= 1e-4
    # balanced classes, near-zero weights: initial cross-entropy ~ ln(C)
    for n_classes in (2, 3, 4):
        toy = make_toy_dataset(n=60 * n_classes, seed=0, n_classes=n_classes)
        net = MlpNet([2, 4, n_classes], Task.CLASSIFICATION, np.random.default_rng(1))
        for w in net.weights:
            w *= 1e-3
        loss = net.loss(toy.features, toy.targets)
        assert abs(loss - math.log(n_classes)) <= 0.05 * math.log(n_classes)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report("mlp-gradient-check", f"20 nets <= 1e-4 rel err, CE ~ ln(C), {elapsed:.1f}s")


def test_zero_one_loss_mode(knn_model):
    start = time.perf_counter()
    corpus = synthetic_corpus(
        40, length=200, seed=123, noise_lo=0.005, noise_hi=0.03, with_accuracy=True
    )
    histories = [h for h, _ in corpus]
    assert all(h.val_accuracy is not None for h in histories)
    es_config = PreventionConfig(
        strategy=Strategy.EARLY_STOP, patience=25, metric=MetricSource.ZERO_ONE_LOSS
    )
    rolling_config = PreventionConfig(
        strategy=Strategy.ROLLING_WINDOW, window=40, step=10,
        metric=MetricSource.ZERO_ONE_LOSS,
    )
    stops = 0
    for history in histories:
        zero_one = 1.0 - history.val_accuracy.values
        for config, model in ((es_config, None), (rolling_config, knn_model)):
            result = replay(config, model, history)
            decision = result.decision
            observed = zero_one[: decision.stopped_epoch + 1]
            # best value/epoch must be the prefix argmin of 1 - accuracy
            assert decision.best_value == observed.min()
            assert decision.best_epoch == int(np.argmin(observed))
            assert result.delay == decision.stopped_epoch - decision.best_epoch
            if decision.action is StopAction.STOP and config is es_config:
                assert result.delay == 25
                stops += 1
            if config is rolling_config and decision.action is StopAction.STOP:
                assert decision.stopped_epoch >= 39  # never before the window fills
    assert stops > 0
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    report("zero-one-loss-mode", f"40 curves, ES+rolling invariants hold, {elapsed:.0f}s")
