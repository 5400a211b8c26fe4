import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from overfitguard_bridge import BridgeConfig, BridgeError, CallbackBridge

CLI = (sys.executable, "-m", "overfitguard")


def es_bridge(patience=2, **kw):
    return CallbackBridge(BridgeConfig(strategy="early-stop", cli=CLI, patience=patience, **kw))


def run_cli(*args):
    proc = subprocess.run([*CLI, *args], capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Recorded histories + a trained model, produced via the CLI only."""
    root = tmp_path_factory.mktemp("bridge_corpus")
    out = root / "histories"
    run_cli("simulate", "--mode", "synthetic", "--out", str(out),
            "--n", "20", "--length", "120", "--seed", "21", "--quiet")
    grid = root / "grid.json"
    grid.write_text(json.dumps([{"k": 1, "dtw": {"radius": 5, "mode": "fast"}}]))
    model = root / "knn.json"
    run_cli("--seed", "2", "train", str(out / "manifest.json"),
            "--classifier", "knn-dtw", "--grid", str(grid),
            "--out", str(model), "--quiet")
    return {"dir": out, "model": model}


def read_val_loss(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [(int(r["epoch"]), float(r["val_loss"])) for r in rows]


class TestHandTraces:
    def test_early_stop_patience_two(self):
        with es_bridge(patience=2) as bridge:
            decisions = [
                bridge.on_epoch_end(e, {"val_loss": v})
                for e, v in enumerate([5.0, 4.0, 3.0, 4.0, 5.0])
            ]
        assert [d.action for d in decisions] == ["continue"] * 4 + ["stop"]
        stop = decisions[-1]
        assert (stop.stopped_epoch, stop.best_epoch, stop.best_value) == (4, 2, 3.0)

    def test_idempotent_after_stop(self):
        with es_bridge(patience=1) as bridge:
            bridge.on_epoch_end(0, {"val_loss": 1.0})
            first = bridge.on_epoch_end(1, {"val_loss": 2.0})
            again = bridge.on_epoch_end(2, {"val_loss": 0.5})
        assert first.should_stop
        assert again is first
        assert bridge.stop_decision is first

    def test_missing_metric_key_names_it(self):
        with es_bridge() as bridge:
            with pytest.raises(BridgeError, match="val_loss"):
                bridge.on_epoch_end(0, {"accuracy": 0.5})

    def test_zero_one_metric_from_accuracy(self):
        config = BridgeConfig(strategy="early-stop", cli=CLI, patience=1, metric="zero_one")
        with CallbackBridge(config) as bridge:
            d0 = bridge.on_epoch_end(0, {"val_accuracy": 0.9})
            d1 = bridge.on_epoch_end(1, {"val_accuracy": 0.8})  # zero-one worsens
        assert d0.action == "continue"
        assert d1.should_stop
        assert d1.best_value == pytest.approx(1.0 - 0.9)


class TestLifecycle:
    def test_close_before_any_epoch(self):
        bridge = es_bridge()
        bridge.close()

    def test_double_close_is_noop(self):
        bridge = es_bridge()
        bridge.start()
        bridge.close()
        bridge.close()

    def test_close_after_stop(self):
        bridge = es_bridge(patience=1)
        bridge.on_epoch_end(0, {"val_loss": 1.0})
        bridge.on_epoch_end(1, {"val_loss": 2.0})
        bridge.close()
        bridge.close()

    def test_dead_child_raises_with_stderr(self):
        config = BridgeConfig(
            strategy="rolling-window", cli=CLI, window=40, step=10,
            model="definitely/missing/model.json",
        )
        bridge = CallbackBridge(config)
        with pytest.raises(BridgeError) as err:
            bridge.on_epoch_end(0, {"val_loss": 1.0})
        assert "missing" in str(err.value) or "model" in str(err.value)
        bridge.close()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BridgeConfig(strategy="nope")
        with pytest.raises(ValueError):
            BridgeConfig(strategy="rolling-window")  # model required
        with pytest.raises(ValueError):
            BridgeConfig(strategy="early-stop", model="m.json")
        with pytest.raises(ValueError):
            BridgeConfig(strategy="early-stop", patience=0)
        with pytest.raises(ValueError):
            BridgeConfig(strategy="rolling-window", model="m.json", window=10, step=20)


def offline_stop_record(values, monitor_args):
    """The stop record the monitor emits when fed the whole stream at once."""
    stream = "".join(
        '{"epoch":%d,"value":%s}\n' % (e, "%.17g" % v) for e, v in values
    )
    proc = subprocess.run(
        [*CLI, "monitor", *monitor_args],
        input=stream, capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.splitlines()
    if lines and '"stop"' in lines[-1]:
        return lines[-1]
    return None


def bridge_stop_record(values, config):
    bridge = CallbackBridge(config)
    try:
        for epoch, value in values:
            decision = bridge.on_epoch_end(epoch, {"val_loss": value})
            if decision.should_stop:
                return decision.raw
        return None
    finally:
        bridge.close()


class TestTransparency:
    def test_bridge_matches_offline_replay(self, corpus):
        # SECONDARY acceptance: streaming 20 recorded histories through the
        # bridge yields decisions bit-identical to replaying the same stream
        # offline, across a mix of strategies.
        start = time.perf_counter()
        manifest = json.loads((corpus["dir"] / "manifest.json").read_text())
        assert len(manifest) == 20
        model = str(corpus["model"])
        plans = []
        for i in range(20):
            if i % 5 == 4:
                plans.append((
                    ["--strategy", "rolling-window", "--window", "40", "--step", "10",
                     "--model", model],
                    BridgeConfig(strategy="rolling-window", cli=CLI, window=40, step=10,
                                 model=model),
                ))
            elif i % 5 == 3:
                plans.append((
                    ["--strategy", "early-stop-smoothed", "--patience", "15",
                     "--smoothing-window", "10"],
                    BridgeConfig(strategy="early-stop-smoothed", cli=CLI, patience=15,
                                 smoothing_window=10),
                ))
            else:
                patience = (10, 25, 40)[i % 3]
                plans.append((
                    ["--strategy", "early-stop", "--patience", str(patience)],
                    BridgeConfig(strategy="early-stop", cli=CLI, patience=patience),
                ))
        n_stops = 0
        for entry, (monitor_args, config) in zip(manifest, plans):
            values = read_val_loss(corpus["dir"] / entry["history_path"])
            offline = offline_stop_record(values, monitor_args)
            online = bridge_stop_record(values, config)
            assert online == offline
            n_stops += offline is not None
        elapsed = time.perf_counter() - start
        assert n_stops >= 5  # the mix must actually exercise stopping
        assert elapsed < 60.0
        print(
            f"ACCEPTANCE bridge-transparency: PASS (20 histories, {n_stops} stops, "
            f"bit-identical records, {elapsed:.0f}s)"
        )

    def test_one_reply_per_record_until_stop(self):
        values = [(e, 5.0 - e * 0.1) for e in range(30)]
        with es_bridge(patience=5) as bridge:
            for epoch, value in values:
                decision = bridge.on_epoch_end(epoch, {"val_loss": value})
                assert decision.action == "continue"
