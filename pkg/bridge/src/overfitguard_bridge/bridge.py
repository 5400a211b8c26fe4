from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass

_STRATEGIES = ("early-stop", "early-stop-smoothed", "rolling-window", "whole-history")
_CLASSIFIER_STRATEGIES = ("rolling-window", "whole-history")
_METRICS = ("val_loss", "zero_one")


class BridgeError(Exception):
    """An exchange with the monitor process failed; carries captured stderr."""

    def __init__(self, message: str, stderr: str = ""):
        if stderr.strip():
            message = f"{message}\n--- monitor stderr ---\n{stderr.strip()}"
        super().__init__(message)
        self.stderr = stderr


@dataclass(frozen=True)
class BridgeConfig:
    """How to spawn the monitor and which metric to stream to it.

    ``cli`` is the argv prefix of the monitor binary; strategy flags mirror
    the monitor's own validation rules.
    """

    strategy: str
    cli: tuple[str, ...] = ("overfitguard",)
    patience: int = 10
    smoothing_window: int = 10
    window: int = 40
    step: int = 10
    min_delta: float = 0.0
    model: str | None = None
    metric: str = "val_loss"
    timeout: float = 10.0

    def __post_init__(self):
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.metric not in _METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.strategy in ("early-stop", "early-stop-smoothed"):
            if self.patience < 1:
                raise ValueError("patience must be >= 1")
            if self.model is not None:
                raise ValueError(f"{self.strategy} does not take a model")
        else:
            if self.model is None:
                raise ValueError(f"{self.strategy} requires a model file")
        if self.strategy == "rolling-window" and not 1 <= self.step <= self.window:
            raise ValueError("step must satisfy 1 <= step <= window")
        if self.min_delta < 0 or self.timeout <= 0:
            raise ValueError("min_delta must be >= 0 and timeout positive")

    def argv(self) -> list[str]:
        argv = [
            *self.cli,
            "monitor",
            "--strategy", self.strategy,
            "--patience", str(self.patience),
            "--smoothing-window", str(self.smoothing_window),
            "--window", str(self.window),
            "--step", str(self.step),
            "--min-delta", repr(self.min_delta),
            "--metric", "zero-one" if self.metric == "zero_one" else "val-loss",
        ]
        if self.model is not None:
            argv += ["--model", self.model]
        return argv


@dataclass(frozen=True)
class BridgeDecision:
    action: str  # "continue" | "stop"
    stopped_epoch: int | None = None
    best_epoch: int | None = None
    best_value: float | None = None
    raw: str | None = None

    @property
    def should_stop(self) -> bool:
        return self.action == "stop"


_CONTINUE = BridgeDecision("continue")


class CallbackBridge:
    """One bridge serves one training loop; exchanges are synchronous."""

    def __init__(self, config: BridgeConfig):
        self.config = config
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._stderr_chunks: list[str] = []
        self._stop: BridgeDecision | None = None
        self._closed = False

    def __enter__(self) -> "CallbackBridge":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def start(self) -> None:
        if self._proc is not None or self._closed:
            return
        try:
            self._proc = subprocess.Popen(
                self.config.argv(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot spawn monitor: {exc}") from None
        threading.Thread(target=self._drain_stdout, daemon=True).start()
        threading.Thread(target=self._drain_stderr, daemon=True).start()

    def _drain_stdout(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _drain_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_chunks.append(line)

    def _stderr(self) -> str:
        return "".join(self._stderr_chunks)

    def _metric_value(self, metrics: dict) -> float:
        if self.config.metric == "val_loss":
            if "val_loss" not in metrics:
                raise BridgeError("metrics are missing the 'val_loss' key")
            return float(metrics["val_loss"])
        if "zero_one" in metrics:
            return float(metrics["zero_one"])
        if "val_accuracy" in metrics:
            return 1.0 - float(metrics["val_accuracy"])
        raise BridgeError("metrics are missing the 'zero_one' (or 'val_accuracy') key")

    def on_epoch_end(self, epoch: int, metrics: dict) -> BridgeDecision:
        """Send one epoch's monitored value; block for the verdict.

        After a stop has been received the bridge keeps returning it without
        touching the (already exited) child.
        """
        if self._stop is not None:
            return self._stop
        if self._closed:
            raise BridgeError("bridge is closed")
        value = self._metric_value(metrics)
        if not math.isfinite(value):
            raise BridgeError("monitored value must be finite")
        self.start()
        record = '{"epoch":%d,"value":%s}\n' % (int(epoch), "%.17g" % value)
        try:
            self._proc.stdin.write(record)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise BridgeError("monitor process is gone", self._stderr()) from None
        try:
            line = self._lines.get(timeout=self.config.timeout)
        except queue.Empty:
            raise BridgeError(
                f"no reply within {self.config.timeout}s", self._stderr()
            ) from None
        if line is None:
            raise BridgeError("monitor exited mid-exchange", self._stderr())
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise BridgeError(f"unparseable reply: {line!r}") from None
        if "error" in reply:
            raise BridgeError(f"monitor rejected the record: {reply['error']}")
        if reply.get("action") == "continue":
            return _CONTINUE
        if reply.get("action") == "stop":
            self._stop = BridgeDecision(
                action="stop",
                stopped_epoch=reply["stopped_epoch"],
                best_epoch=reply["best_epoch"],
                best_value=reply["best_value"],
                raw=line.rstrip("\n"),
            )
            return self._stop
        raise BridgeError(f"unknown reply: {line!r}")

    @property
    def stop_decision(self) -> BridgeDecision | None:
        return self._stop

    def close(self) -> None:
        """Terminate the child and release the pipes; safe to call twice."""
        self._closed = True
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin and not proc.stdin.closed:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=self.config.timeout)
        except subprocess.TimeoutExpired:
            proc.terminate()
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
