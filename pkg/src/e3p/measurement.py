"""Measurement harness: run workloads while sampling power concurrently.

A trial spawns the workload subprocess and samples telemetry in a background
thread; the two activities synchronize only through a shared monotonic clock
and the workload's stdout handshake:

    E3P_BEGIN            printed immediately before the measured region
    E3P_END [<acc_pct>]  printed immediately after it, accuracy optional

With the handshake window (default), model load and warm-up are excluded
from the measured region; ``window_mode="process"`` measures the whole
process lifetime instead. Trials in a session run strictly sequentially;
failed trials are excluded from the means and mark the session degraded
rather than being silently averaged.

Recorded logs can stand in for live tools in two ways: paced replay during
a live trial (samples are re-timed onto the trial clock at the configured
interval, looping the log as needed) and offline :func:`replay_session`
against an explicit list of trial windows, which recomputes the exact
report a live run would have produced.
"""

from __future__ import annotations

import json
import logging
import os
import re
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import mean
from typing import Mapping, Sequence

from .errors import (
    ConfigError,
    InsufficientTelemetryError,
    MeasurementError,
    SessionError,
    TelemetryError,
)
from .metrics import EnergyResult, energy_from_samples
from .telemetry import (
    PowerSample,
    RailSelection,
    TelemetrySource,
    open_stream,
    select_power,
)

logger = logging.getLogger(__name__)

HANDSHAKE_BEGIN = "E3P_BEGIN"
HANDSHAKE_END = "E3P_END"
_END_RE = re.compile(r"^E3P_END(?:\s+(\d+(?:\.\d+)?))?\s*$")

_STDERR_TAIL_LINES = 20
REPORT_SCHEMA = "e3p-report/1"
WINDOWS_SCHEMA = "e3p-windows/1"


@dataclass(frozen=True)
class WorkloadSpec:
    """The inference workload to run: argv, env overrides, handshake flag."""

    command: tuple[str, ...]
    env: Mapping[str, str] | None = None
    expected_handshake: bool = True

    def __post_init__(self):
        if not self.command:
            raise ConfigError("workload command must not be empty")


@dataclass(frozen=True)
class TrialWindow:
    """One replayed trial's window bounds (same clock as the recorded log)."""

    t_start_ms: float
    t_end_ms: float
    reported_acc_pct: float | None = None
    exit_status: int = 0


@dataclass(frozen=True)
class MeasurementTrial:
    """One timed workload run restricted to its measurement window.

    For successful trials ``t_end_ms > t_start_ms`` and every retained
    sample lies inside the window. Failed trials keep best-effort window
    bounds and record why they failed.
    """

    index: int
    t_start_ms: float
    t_end_ms: float
    samples: tuple[PowerSample, ...]
    n_samples: int
    reported_acc_pct: float | None
    exit_status: int | None
    failed: bool = False
    error: str | None = None
    stderr_tail: str | None = None
    energy: EnergyResult | None = None

    def __post_init__(self):
        if not self.failed:
            if self.t_end_ms <= self.t_start_ms:
                raise MeasurementError(
                    f"trial {self.index}: window end {self.t_end_ms!r} not "
                    f"after start {self.t_start_ms!r}")
            for sample in self.samples:
                if not self.t_start_ms <= sample.t_ms <= self.t_end_ms:
                    raise MeasurementError(
                        f"trial {self.index}: sample at {sample.t_ms} ms "
                        f"outside window")


@dataclass(frozen=True)
class MeasurementReport:
    """Aggregate of a measurement session: all trials plus mean metrics.

    Means are arithmetic means over the successful trials' per-trial
    values (never the energy of concatenated trials). ``acc_source``
    records whether accuracy came from the workload handshake, the model
    registry, or is absent.
    """

    model_name: str
    device_label: str
    dataset_label: str
    trials: tuple[MeasurementTrial, ...]
    mean_time_s: float
    mean_power_mw: float
    mean_energy_j: float
    acc_pct: float | None
    acc_source: str
    degraded: bool
    rail_selection: str
    window_mode: str
    source_kind: str
    sample_interval_ms: int
    idle_power_mw: float | None = None

    @property
    def successful_trials(self) -> tuple[MeasurementTrial, ...]:
        return tuple(t for t in self.trials if not t.failed)


class _TelemetrySampler:
    """Background thread collecting samples on the trial's monotonic clock.

    Live sources stream from the spawned tool; recorded logs are replayed
    paced at the source's sample interval (looping when exhausted) so that
    wall-clock handshake timestamps land inside the sampled timeline.
    """

    def __init__(self, source: TelemetrySource):
        self.source = source
        self.error: Exception | None = None
        self._samples: list[PowerSample] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._stream = None
        self._thread: threading.Thread | None = None
        self._epoch: float | None = None

    def start(self) -> None:
        if self.source.kind == "recorded_log":
            if not Path(self.source.path).exists():
                raise TelemetryError(
                    f"recorded log not found: {self.source.path}")
        else:
            import shutil
            argv = self.source.spawn_argv()
            if shutil.which(argv[0]) is None:
                raise TelemetryError(f"telemetry tool not found: {argv[0]!r}")
        self._epoch = time.monotonic()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="telemetry-sampler")
        self._thread.start()

    def now_ms(self) -> float:
        return (time.monotonic() - self._epoch) * 1000.0

    def stop(self) -> list[PowerSample]:
        self._stop.set()
        if self._stream is not None:
            self._stream.close()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
        with self._lock:
            return list(self._samples)

    def _append(self, sample: PowerSample) -> None:
        with self._lock:
            self._samples.append(sample)

    def _run(self) -> None:
        try:
            if self.source.kind == "recorded_log":
                self._run_paced_replay()
            else:
                self._stream = open_stream(
                    self.source, epoch_monotonic=self._epoch,
                    on_error="skip")
                for sample in self._stream:
                    self._append(sample)
                    if self._stop.is_set():
                        break
        except Exception as exc:  # surfaced by the trial, never swallowed
            self.error = exc

    def _run_paced_replay(self) -> None:
        interval_s = self.source.sample_interval_ms / 1000.0
        tick = 0
        while not self._stop.is_set():
            produced = False
            for sample in open_stream(self.source, on_error="skip"):
                produced = True
                target_s = tick * interval_s
                delay = target_s - (time.monotonic() - self._epoch)
                if delay > 0 and self._stop.wait(delay):
                    return
                self._append(PowerSample(t_ms=self.now_ms(),
                                         rails=sample.rails))
                tick += 1
                if self._stop.is_set():
                    return
            if not produced:
                return  # empty log: nothing to pace


def _read_stderr(pipe, sink: deque) -> None:
    for line in pipe:
        sink.append(line.rstrip("\n"))
    pipe.close()


def run_trial(
    workload: WorkloadSpec,
    source: TelemetrySource,
    sel: RailSelection,
    *,
    window_mode: str = "handshake",
    trial_index: int = 0,
) -> MeasurementTrial:
    """Run the workload once while sampling power; return the trial record.

    The returned trial is marked failed (with the reason) when the workload
    exits nonzero, the expected handshake never completes, telemetry
    breaks, or no sample lands inside the measurement window. Harness
    setup failures (unspawnable workload, missing telemetry tool or log)
    raise instead.
    """
    if window_mode not in ("handshake", "process"):
        raise ConfigError(f"unknown window mode {window_mode!r}")
    use_handshake = window_mode == "handshake" and workload.expected_handshake

    sampler = _TelemetrySampler(source)
    sampler.start()
    begin_ms = end_ms = None
    acc: float | None = None
    stderr_tail: deque = deque(maxlen=_STDERR_TAIL_LINES)
    try:
        env = dict(os.environ)
        if workload.env:
            env.update(workload.env)
        try:
            proc = subprocess.Popen(
                list(workload.command), stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, errors="replace",
                bufsize=1, env=env)
        except OSError as exc:
            raise MeasurementError(
                f"failed to spawn workload {workload.command!r}: {exc}"
            ) from None
        spawn_ms = sampler.now_ms()
        stderr_thread = threading.Thread(
            target=_read_stderr, args=(proc.stderr, stderr_tail), daemon=True)
        stderr_thread.start()
        for line in proc.stdout:
            text = line.rstrip("\n")
            if text == HANDSHAKE_BEGIN:
                if begin_ms is None:
                    begin_ms = sampler.now_ms()
                else:
                    logger.warning("duplicate %s ignored", HANDSHAKE_BEGIN)
                continue
            match = _END_RE.match(text)
            if match:
                if end_ms is None:
                    end_ms = sampler.now_ms()
                    if match.group(1) is not None:
                        acc = float(match.group(1))
                else:
                    logger.warning("duplicate %s ignored", HANDSHAKE_END)
        exit_status = proc.wait()
        exit_ms = sampler.now_ms()
        stderr_thread.join(timeout=5.0)
    finally:
        samples = sampler.stop()

    reasons: list[str] = []
    if exit_status != 0:
        reasons.append(f"workload exited with status {exit_status}")
    if use_handshake and not reasons:
        if begin_ms is None or end_ms is None or end_ms <= begin_ms:
            reasons.append(
                f"handshake protocol not completed ({HANDSHAKE_BEGIN}/"
                f"{HANDSHAKE_END} not both seen in order)")
    if sampler.error is not None:
        reasons.append(f"telemetry failed: {sampler.error}")

    if use_handshake and begin_ms is not None and end_ms is not None \
            and end_ms > begin_ms:
        t_start, t_end = begin_ms, end_ms
    else:
        t_start, t_end = spawn_ms, max(exit_ms, spawn_ms + 1e-6)

    in_window = tuple(s for s in samples if t_start <= s.t_ms <= t_end)
    if not reasons and not in_window:
        reasons.append("insufficient telemetry: no samples in the "
                       "measurement window")

    return MeasurementTrial(
        index=trial_index,
        t_start_ms=t_start,
        t_end_ms=t_end,
        samples=in_window,
        n_samples=len(in_window),
        reported_acc_pct=acc,
        exit_status=exit_status,
        failed=bool(reasons),
        error="; ".join(reasons) if reasons else None,
        stderr_tail="\n".join(stderr_tail) if reasons and stderr_tail else None,
    )


def _aggregate(
    trials: Sequence[MeasurementTrial],
    sel: RailSelection,
    *,
    model_name: str,
    device_label: str,
    dataset_label: str,
    window_mode: str,
    source: TelemetrySource,
    registry_card=None,
    idle_power_mw: float | None = None,
) -> MeasurementReport:
    """Attach per-trial energies and compute session means."""
    finished: list[MeasurementTrial] = []
    for trial in trials:
        if trial.failed:
            finished.append(trial)
            continue
        energy = energy_from_samples(
            trial.samples, sel, trial.t_start_ms, trial.t_end_ms)
        finished.append(replace(trial, energy=energy))
    ok = [t for t in finished if not t.failed]
    if not ok:
        raise SessionError(
            "all trials failed: "
            + "; ".join(f"#{t.index}: {t.error}" for t in finished),
            trials=tuple(finished))

    reported = [t.reported_acc_pct for t in ok
                if t.reported_acc_pct is not None]
    if reported:
        acc_pct, acc_source = mean(reported), "workload"
    elif registry_card is not None:
        acc_pct, acc_source = registry_card.top1_acc_pct, "registry"
    else:
        acc_pct, acc_source = None, "none"

    return MeasurementReport(
        model_name=model_name,
        device_label=device_label,
        dataset_label=dataset_label,
        trials=tuple(finished),
        mean_time_s=mean(t.energy.time_s for t in ok),
        mean_power_mw=mean(t.energy.avg_power_mw for t in ok),
        mean_energy_j=mean(t.energy.energy_j for t in ok),
        acc_pct=acc_pct,
        acc_source=acc_source,
        degraded=any(t.failed for t in finished),
        rail_selection=sel.label(),
        window_mode=window_mode,
        source_kind=source.kind,
        sample_interval_ms=source.sample_interval_ms,
        idle_power_mw=idle_power_mw,
    )


def run_session(
    workload: WorkloadSpec,
    source: TelemetrySource,
    sel: RailSelection,
    trials_n: int = 3,
    *,
    window_mode: str = "handshake",
    cooldown_ms: int = 0,
    model_name: str = "unknown",
    device_label: str = "unknown",
    dataset_label: str = "unknown",
    registry_card=None,
    idle_power_mw: float | None = None,
) -> MeasurementReport:
    """Run ``trials_n`` sequential trials and aggregate their means.

    Failed trials are excluded from the means and mark the report degraded.

    Raises:
        SessionError: when every trial failed (partial records attached).
        ConfigError: for invalid trial counts.
    """
    if not isinstance(trials_n, int) or isinstance(trials_n, bool) \
            or trials_n < 1:
        raise ConfigError(f"trials_n must be an integer >= 1, got {trials_n!r}")
    trials = []
    for i in range(trials_n):
        if i > 0 and cooldown_ms > 0:
            time.sleep(cooldown_ms / 1000.0)
        trial = run_trial(workload, source, sel, window_mode=window_mode,
                          trial_index=i)
        if trial.failed:
            logger.warning("trial %d failed: %s", i, trial.error)
        trials.append(trial)
    return _aggregate(
        trials, sel, model_name=model_name, device_label=device_label,
        dataset_label=dataset_label, window_mode=window_mode, source=source,
        registry_card=registry_card, idle_power_mw=idle_power_mw)


def replay_session(
    source: TelemetrySource,
    windows: Sequence[TrialWindow],
    sel: RailSelection,
    *,
    window_mode: str = "handshake",
    model_name: str = "unknown",
    device_label: str = "unknown",
    dataset_label: str = "unknown",
    registry_card=None,
) -> MeasurementReport:
    """Recompute a session report offline from a recorded log and windows.

    Produces the same report a live session over the same samples would
    have; replaying identical inputs yields identical output.
    """
    if not windows:
        raise ConfigError("replay needs at least one trial window")
    samples = list(open_stream(source))
    if not samples:
        raise InsufficientTelemetryError(
            f"recorded log {source.path} produced no samples")
    trials = []
    for i, window in enumerate(windows):
        reasons = []
        if window.exit_status != 0:
            reasons.append(
                f"workload exited with status {window.exit_status}")
        if window.t_end_ms <= window.t_start_ms:
            reasons.append("invalid window: end not after start")
        in_window = tuple(
            s for s in samples
            if window.t_start_ms <= s.t_ms <= window.t_end_ms)
        if not reasons and not in_window:
            reasons.append("insufficient telemetry: no samples in the "
                           "measurement window")
        trials.append(MeasurementTrial(
            index=i,
            t_start_ms=window.t_start_ms,
            t_end_ms=window.t_end_ms,
            samples=in_window if not reasons else (),
            n_samples=len(in_window) if not reasons else 0,
            reported_acc_pct=window.reported_acc_pct,
            exit_status=window.exit_status,
            failed=bool(reasons),
            error="; ".join(reasons) if reasons else None,
        ))
    return _aggregate(
        trials, sel, model_name=model_name, device_label=device_label,
        dataset_label=dataset_label, window_mode=window_mode, source=source,
        registry_card=registry_card)


def calibrate_idle(
    source: TelemetrySource,
    sel: RailSelection,
    duration_ms: float,
) -> float:
    """Mean selected power over an idle window, in mW.

    Stored in report metadata only; the harness never subtracts it from
    measured power. Recorded logs are consumed offline (samples with
    ``t_ms < duration_ms``); live tools are sampled for the duration.

    Raises:
        ConfigError: if duration is under 5 sample intervals.
        InsufficientTelemetryError: if no sample arrives.
    """
    if duration_ms < 5 * source.sample_interval_ms:
        raise ConfigError(
            f"idle calibration needs >= 5 sample intervals "
            f"({5 * source.sample_interval_ms} ms), got {duration_ms!r} ms")
    if source.kind == "recorded_log":
        samples = []
        with open_stream(source) as stream:
            for sample in stream:
                if sample.t_ms >= duration_ms:
                    break
                samples.append(sample)
    else:
        sampler = _TelemetrySampler(source)
        sampler.start()
        time.sleep(duration_ms / 1000.0)
        samples = sampler.stop()
        if sampler.error is not None:
            raise sampler.error
    if not samples:
        raise InsufficientTelemetryError("no idle telemetry samples collected")
    return mean(select_power(s, sel) for s in samples)


# --- report (de)serialization ---------------------------------------------------

def _trial_doc(trial: MeasurementTrial, include_samples: bool) -> dict:
    doc = {
        "index": trial.index,
        "failed": trial.failed,
        "error": trial.error,
        "exit_status": trial.exit_status,
        "t_start_ms": trial.t_start_ms,
        "t_end_ms": trial.t_end_ms,
        "sample_count": trial.n_samples,
        "reported_acc_pct": trial.reported_acc_pct,
        "time_s": trial.energy.time_s if trial.energy else None,
        "avg_power_mw": trial.energy.avg_power_mw if trial.energy else None,
        "energy_j": trial.energy.energy_j if trial.energy else None,
        "trapezoid_power_mw":
            trial.energy.trapezoid_power_mw if trial.energy else None,
        "stderr_tail": trial.stderr_tail,
    }
    if include_samples:
        doc["samples"] = [{"t_ms": s.t_ms, "rails": dict(sorted(s.rails.items()))}
                          for s in trial.samples]
    return doc


def report_to_json(report: MeasurementReport,
                   include_samples: bool = False) -> str:
    """Serialize a report to its stable JSON schema (full precision)."""
    doc = {
        "schema": REPORT_SCHEMA,
        "model_name": report.model_name,
        "device_label": report.device_label,
        "dataset_label": report.dataset_label,
        "rail_selection": report.rail_selection,
        "window_mode": report.window_mode,
        "source_kind": report.source_kind,
        "sample_interval_ms": report.sample_interval_ms,
        "acc_pct": report.acc_pct,
        "acc_source": report.acc_source,
        "degraded": report.degraded,
        "idle_power_mw": report.idle_power_mw,
        "trials": [_trial_doc(t, include_samples) for t in report.trials],
        "aggregate": {
            "mean_time_s": report.mean_time_s,
            "mean_power_mw": report.mean_power_mw,
            "mean_energy_j": report.mean_energy_j,
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def report_from_json(text: str) -> MeasurementReport:
    """Parse a report produced by :func:`report_to_json`.

    Raw samples, if embedded, are restored; otherwise trials carry their
    counts only.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeasurementError(f"invalid report JSON: {exc}") from None
    if doc.get("schema") != REPORT_SCHEMA:
        raise MeasurementError(
            f"unexpected report schema {doc.get('schema')!r}, "
            f"want {REPORT_SCHEMA!r}")
    trials = []
    for tdoc in doc["trials"]:
        energy = None
        if tdoc.get("energy_j") is not None:
            energy = EnergyResult(
                time_s=tdoc["time_s"],
                avg_power_mw=tdoc["avg_power_mw"],
                energy_j=tdoc["energy_j"],
                trapezoid_power_mw=tdoc.get("trapezoid_power_mw"))
        samples = tuple(
            PowerSample(t_ms=s["t_ms"], rails=dict(s["rails"]))
            for s in tdoc.get("samples", ()))
        trials.append(MeasurementTrial(
            index=tdoc["index"],
            t_start_ms=tdoc["t_start_ms"],
            t_end_ms=tdoc["t_end_ms"],
            samples=samples,
            n_samples=tdoc["sample_count"],
            reported_acc_pct=tdoc.get("reported_acc_pct"),
            exit_status=tdoc.get("exit_status"),
            failed=tdoc["failed"],
            error=tdoc.get("error"),
            stderr_tail=tdoc.get("stderr_tail"),
            energy=energy))
    agg = doc["aggregate"]
    return MeasurementReport(
        model_name=doc["model_name"],
        device_label=doc["device_label"],
        dataset_label=doc["dataset_label"],
        trials=tuple(trials),
        mean_time_s=agg["mean_time_s"],
        mean_power_mw=agg["mean_power_mw"],
        mean_energy_j=agg["mean_energy_j"],
        acc_pct=doc.get("acc_pct"),
        acc_source=doc.get("acc_source", "none"),
        degraded=doc["degraded"],
        rail_selection=doc["rail_selection"],
        window_mode=doc["window_mode"],
        source_kind=doc["source_kind"],
        sample_interval_ms=doc["sample_interval_ms"],
        idle_power_mw=doc.get("idle_power_mw"))


def load_trial_windows(path: str | Path) -> tuple[list[TrialWindow], str]:
    """Load a replay windows file; returns (windows, window_mode)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read windows file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid windows JSON {path}: {exc}") from None
    if doc.get("schema") != WINDOWS_SCHEMA:
        raise ConfigError(
            f"{path}: unexpected schema {doc.get('schema')!r}, "
            f"want {WINDOWS_SCHEMA!r}")
    windows = []
    for i, wdoc in enumerate(doc.get("trials", ())):
        try:
            windows.append(TrialWindow(
                t_start_ms=float(wdoc["t_start_ms"]),
                t_end_ms=float(wdoc["t_end_ms"]),
                reported_acc_pct=(float(wdoc["reported_acc_pct"])
                                  if wdoc.get("reported_acc_pct") is not None
                                  else None),
                exit_status=int(wdoc.get("exit_status", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(
                f"{path}: trial window {i} is malformed: {exc}") from None
    return windows, doc.get("window_mode", "handshake")
