"""Online stopping strategies: early stopping (plain and smoothed) and
classifier-based monitors over a rolling window or the whole observed history.

A MonitorSession is single-owner mutable state consuming one monitored value
per epoch; ``replay`` drives a session over a recorded history and is pure.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, InvalidInput, InvalidValue, OutOfOrderEpoch
from .history import (
    FLOAT_FORMAT,
    LossCurve,
    MetricSource,
    OverfitLabel,
    TrainingHistory,
    monitored_series,
)

__all__ = [
    "Strategy",
    "PreventionConfig",
    "StopAction",
    "StopDecision",
    "MonitorSession",
    "open_session",
    "observe",
    "ReplayResult",
    "replay",
    "run_monitor",
]


class Strategy(Enum):
    EARLY_STOP = "early-stop"
    EARLY_STOP_SMOOTHED = "early-stop-smoothed"
    ROLLING_WINDOW = "rolling-window"
    WHOLE_HISTORY = "whole-history"


_CLASSIFIER_STRATEGIES = (Strategy.ROLLING_WINDOW, Strategy.WHOLE_HISTORY)


@dataclass(frozen=True)
class PreventionConfig:
    strategy: Strategy
    patience: int = 10
    smoothing_window: int = 10
    window: int = 40
    step: int = 10
    min_delta: float = 0.0
    metric: MetricSource = MetricSource.VAL_LOSS

    def __post_init__(self):
        if self.min_delta < 0.0:
            raise ConfigError("min_delta must be non-negative")
        if self.strategy in (Strategy.EARLY_STOP, Strategy.EARLY_STOP_SMOOTHED):
            if self.patience < 1:
                raise ConfigError("patience must be >= 1")
            if self.strategy is Strategy.EARLY_STOP_SMOOTHED and self.smoothing_window < 1:
                raise ConfigError("smoothing_window must be >= 1")
        if self.strategy is Strategy.ROLLING_WINDOW:
            if self.window < 2:
                raise ConfigError("window must be >= 2")
            if not 1 <= self.step <= self.window:
                raise ConfigError("step must satisfy 1 <= step <= window")
        if self.strategy is Strategy.WHOLE_HISTORY and self.step < 1:
            raise ConfigError("step must be >= 1")


class StopAction(Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass(frozen=True)
class StopDecision:
    action: StopAction
    stopped_epoch: int | None = None
    best_epoch: int | None = None
    best_value: float | None = None


_CONTINUE = StopDecision(StopAction.CONTINUE)


class MonitorSession:
    """Single-owner mutable monitor; feed epochs strictly increasing."""

    def __init__(self, config: PreventionConfig, model=None):
        needs_model = config.strategy in _CLASSIFIER_STRATEGIES
        if needs_model and model is None:
            raise ConfigError(f"{config.strategy.value} requires a classifier model")
        if not needs_model and model is not None:
            raise ConfigError(f"{config.strategy.value} does not take a model")
        self.config = config
        self.model = model
        self._epochs: list[int] = []
        self._values: list[float] = []
        self._best_epoch: int | None = None
        self._best_value = math.inf
        self._wait = 0
        self._es_best = math.inf
        self._tail = deque(maxlen=config.smoothing_window)
        self._stopped: StopDecision | None = None

    @property
    def best_epoch(self) -> int | None:
        return self._best_epoch

    @property
    def best_value(self) -> float | None:
        return self._best_value if self._best_epoch is not None else None

    @property
    def last_epoch(self) -> int | None:
        return self._epochs[-1] if self._epochs else None

    def _stop(self, epoch: int) -> StopDecision:
        self._stopped = StopDecision(
            StopAction.STOP,
            stopped_epoch=epoch,
            best_epoch=self._best_epoch,
            best_value=self._best_value,
        )
        return self._stopped

    def observe(self, epoch: int, value: float) -> StopDecision:
        if self._stopped is not None:
            return self._stopped
        if self._epochs and epoch <= self._epochs[-1]:
            raise OutOfOrderEpoch(
                f"epoch {epoch} is not after {self._epochs[-1]}"
            )
        if epoch < 0:
            raise OutOfOrderEpoch("epochs must be non-negative")
        if not math.isfinite(value):
            raise InvalidValue("monitored values must be finite")
        self._epochs.append(epoch)
        self._values.append(value)
        if value < self._best_value:
            self._best_value = value
            self._best_epoch = epoch

        config = self.config
        strategy = config.strategy
        if strategy in (Strategy.EARLY_STOP, Strategy.EARLY_STOP_SMOOTHED):
            if strategy is Strategy.EARLY_STOP_SMOOTHED:
                self._tail.append(value)
                monitored = sum(self._tail) / len(self._tail)
            else:
                monitored = value
            if monitored < self._es_best - config.min_delta:
                self._es_best = monitored
                self._wait = 0
            else:
                self._wait += 1
                if self._wait == config.patience:
                    return self._stop(epoch)
            return _CONTINUE

        count = len(self._values)
        if strategy is Strategy.ROLLING_WINDOW:
            due = count >= config.window and (count - config.window) % config.step == 0
            span = config.window
        else:
            due = count >= max(config.step, 2) and count % config.step == 0
            span = count
        if due:
            curve = LossCurve(
                np.array(self._epochs[-span:], dtype=np.int64),
                np.array(self._values[-span:]),
            )
            label, _ = self.model.predict(curve)
            if label is OverfitLabel.OVERFIT:
                return self._stop(epoch)
        return _CONTINUE


def open_session(config: PreventionConfig, model=None) -> MonitorSession:
    return MonitorSession(config, model)


def observe(session: MonitorSession, epoch: int, value: float) -> StopDecision:
    return session.observe(epoch, value)


@dataclass(frozen=True)
class ReplayResult:
    decision: StopDecision
    delay: int
    hit_optimal: bool
    accuracy_at_best: float | None


def replay(
    config: PreventionConfig, model, history: TrainingHistory
) -> ReplayResult:
    """Feed a recorded history through a fresh session, epoch by epoch.

    If the strategy never fires, the stopped epoch is the final one and the
    best epoch is the argmin over everything observed. The optimal epoch is
    the argmin of the entire monitored curve (first occurrence on ties).
    """
    series = monitored_series(history, config.metric)
    curve = series.curve
    if len(curve) < 1:
        raise InvalidInput("history is empty")
    session = MonitorSession(config, model)
    decision = None
    for epoch, value in zip(curve.epochs, curve.values):
        d = session.observe(int(epoch), float(value))
        if d.action is StopAction.STOP:
            decision = d
            break
    if decision is None:
        decision = StopDecision(
            StopAction.CONTINUE,
            stopped_epoch=int(curve.epochs[-1]),
            best_epoch=session.best_epoch,
            best_value=session.best_value,
        )
    optimal_epoch = int(curve.epochs[int(np.argmin(curve.values))])
    accuracy = None
    if history.val_accuracy is not None:
        accuracy = history.val_accuracy.value_at(decision.best_epoch)
    return ReplayResult(
        decision=decision,
        delay=decision.stopped_epoch - decision.best_epoch,
        hit_optimal=decision.best_epoch == optimal_epoch,
        accuracy_at_best=accuracy,
    )


# --------------------------------------------------------------------------
# Streaming NDJSON monitor protocol
#
# Inbound:  {"epoch": int, "value": float}      one record per line
# Outbound: {"action":"continue"} or
#           {"action":"stop","stopped_epoch":..,"best_epoch":..,"best_value":..}
# Malformed input emits one {"error": "..."} record; exit status 2.
# --------------------------------------------------------------------------


def _stop_record(decision: StopDecision) -> str:
    value = FLOAT_FORMAT % decision.best_value
    return (
        '{"action":"stop","stopped_epoch":%d,"best_epoch":%d,"best_value":%s}'
        % (decision.stopped_epoch, decision.best_epoch, value)
    )


def _parse_record(line: str) -> tuple[int, float]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"malformed JSON: {exc}") from None
    if not isinstance(record, dict):
        raise InvalidInput("record must be a JSON object")
    if "epoch" not in record or "value" not in record:
        raise InvalidInput("record needs 'epoch' and 'value'")
    epoch = record["epoch"]
    value = record["value"]
    if isinstance(epoch, bool) or not isinstance(epoch, int):
        raise InvalidInput("'epoch' must be an integer")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidInput("'value' must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInput("'value' must be finite")
    return epoch, value


def run_monitor(session: MonitorSession, in_stream, out_stream) -> int:
    """Serve the NDJSON protocol until stop, end of stream, or a protocol
    error. Returns the process exit status (0 ok, 2 protocol error)."""
    for raw in in_stream:
        line = raw.rstrip("\r\n")
        try:
            epoch, value = _parse_record(line)
            decision = session.observe(epoch, value)
        except (InvalidInput, InvalidValue, OutOfOrderEpoch) as exc:
            out_stream.write(json.dumps({"error": str(exc)}) + "\n")
            out_stream.flush()
            return 2
        if decision.action is StopAction.STOP:
            out_stream.write(_stop_record(decision) + "\n")
            out_stream.flush()
            return 0
        out_stream.write('{"action":"continue"}\n')
        out_stream.flush()
    return 0
