"""Device-related metrics: inference time, average power, energy, and SAM.

The Sustainable Accuracy Metric (SAM) couples measured energy with accuracy:

    sam = b * acc^a / log10(energy_J)

with accuracy as a FRACTION in (0, 1] and energy in joules (> 1 J so the
denominator stays positive). NetScore, by contrast, consumes accuracy in
percent; the conversion happens only inside these formulas, never in stored
data. All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import (
    InsufficientTelemetryError,
    MeasurementError,
    MetricDomainError,
    TelemetryError,
)
from .telemetry import PowerSample, RailSelection, select_power


@dataclass(frozen=True)
class EnergyResult:
    """Time/power/energy triple for one measured window.

    ``energy_j`` always equals ``avg_power_mw / 1000 * time_s`` (checked to
    1 part in 1e9). ``trapezoid_power_mw`` is an advisory time-weighted
    cross-check of the arithmetic ``avg_power_mw``, not used downstream.
    """

    time_s: float
    avg_power_mw: float
    energy_j: float
    trapezoid_power_mw: float | None = None

    def __post_init__(self):
        for fname in ("time_s", "avg_power_mw", "energy_j"):
            value = getattr(self, fname)
            if not math.isfinite(value) or value <= 0:
                raise MetricDomainError(
                    f"{fname} must be finite and > 0, got {value!r}")
        identity = self.avg_power_mw / 1000.0 * self.time_s
        if abs(self.energy_j - identity) > 1e-9 * max(self.energy_j, identity):
            raise MetricDomainError(
                f"energy_j {self.energy_j!r} breaks the definitional "
                f"identity power*time = {identity!r}")


@dataclass(frozen=True)
class SamParams:
    """SAM parameters: ``a`` scales accuracy, ``b`` scales the result."""

    a: float
    b: float
    label: str

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0
                and math.isfinite(self.b) and self.b > 0):
            raise MetricDomainError(
                f"SAM parameters must be finite positives, got "
                f"a={self.a!r}, b={self.b!r}")


SAM1 = SamParams(a=1.0, b=1.0, label="sam1")
SAM5 = SamParams(a=5.0, b=5.0, label="sam5")
PRESETS: dict[str, SamParams] = {"sam1": SAM1, "sam5": SAM5}
DEFAULT_PRESETS: tuple[SamParams, ...] = (SAM5, SAM1)


@dataclass(frozen=True)
class ScoreRow:
    """One model's measured figures plus its computed scores."""

    model_name: str
    acc_pct: float | None
    time_s: float | None
    avg_power_mw: float | None
    energy_j: float | None
    sam_values: Mapping[str, float]
    net_score: float | None = None
    error: str | None = None


def energy_from_samples(
    samples: Sequence[PowerSample],
    sel: RailSelection,
    t_start_ms: float,
    t_end_ms: float,
) -> EnergyResult:
    """Compute the window's time, average power, and energy.

    Average power is the plain arithmetic mean of the selected per-sample
    powers; a trapezoidal time-weighted mean is attached as a cross-check.
    Samples outside [t_start_ms, t_end_ms] are ignored, so widening the
    input stream never changes the result.

    Raises:
        MeasurementError: if the window bounds are inverted or empty.
        InsufficientTelemetryError: if no sample falls inside the window.
        TelemetryError: if in-window timestamps are not nondecreasing.
    """
    if not (math.isfinite(t_start_ms) and math.isfinite(t_end_ms)) \
            or t_end_ms <= t_start_ms:
        raise MeasurementError(
            f"invalid window [{t_start_ms!r}, {t_end_ms!r}]")
    in_window = [s for s in samples if t_start_ms <= s.t_ms <= t_end_ms]
    if not in_window:
        raise InsufficientTelemetryError(
            f"no telemetry samples inside window "
            f"[{t_start_ms}, {t_end_ms}] ms")
    times = [s.t_ms for s in in_window]
    if any(b < a for a, b in zip(times, times[1:])):
        raise TelemetryError("in-window sample timestamps are not "
                             "nondecreasing")
    powers = [select_power(s, sel) for s in in_window]
    avg = math.fsum(powers) / len(powers)

    if len(in_window) >= 2 and times[-1] > times[0]:
        area = math.fsum(
            (powers[i] + powers[i + 1]) / 2.0 * (times[i + 1] - times[i])
            for i in range(len(powers) - 1))
        trapezoid = area / (times[-1] - times[0])
    else:
        trapezoid = avg

    time_s = (t_end_ms - t_start_ms) / 1000.0
    return EnergyResult(
        time_s=time_s,
        avg_power_mw=avg,
        energy_j=avg / 1000.0 * time_s,
        trapezoid_power_mw=trapezoid,
    )


def sam(acc_frac: float, energy_j: float, p: SamParams) -> float:
    """Sustainable Accuracy Metric: ``b * acc^a / log10(energy)``.

    ``acc_frac`` is a fraction in (0, 1]; ``energy_j`` must exceed 1 J,
    below which log10 is nonpositive and the metric is undefined (extend
    the run instead of clamping).
    """
    if not math.isfinite(acc_frac) or not 0 < acc_frac <= 1:
        raise MetricDomainError(
            f"accuracy must be a fraction in (0, 1], got {acc_frac!r}")
    if not math.isfinite(energy_j) or energy_j <= 1.0:
        raise MetricDomainError(
            f"energy must exceed 1 J for a positive log10, got {energy_j!r}")
    # grouped so that the result is exactly linear in b
    return p.b * (acc_frac ** p.a / math.log10(energy_j))


def _summary(report) -> tuple[str, float | None, float, float, float]:
    """Accept either a MeasurementReport or any row-shaped record."""
    if hasattr(report, "mean_time_s"):
        return (report.model_name, report.acc_pct, report.mean_time_s,
                report.mean_power_mw, report.mean_energy_j)
    return (report.model_name, report.acc_pct, report.time_s,
            report.avg_power_mw, report.energy_j)


def score_rows(
    reports: Iterable,
    presets: Sequence[SamParams] = DEFAULT_PRESETS,
    registry=None,
) -> list[ScoreRow]:
    """Build one ScoreRow per measurement, evaluating every SAM preset.

    Accuracy is converted percent -> fraction internally. A row whose SAM
    is undefined (energy <= 1 J, missing or out-of-range accuracy) is
    marked invalid via its ``error`` field instead of aborting the batch.
    When a ``registry`` is given, each row also gets the model's NetScore.
    """
    from .screening import net_score  # local import avoids a module cycle

    rows: list[ScoreRow] = []
    for report in reports:
        name, acc_pct, time_s, power_mw, energy_j = _summary(report)
        ns = None
        if registry is not None:
            card = registry.lookup(name)
            if card is not None:
                ns = net_score(card.top1_acc_pct, card.params_m, card.macs_g)
        sam_values: dict[str, float] = {}
        error = None
        if acc_pct is None:
            error = "no accuracy available for this measurement"
        else:
            try:
                for preset in presets:
                    sam_values[preset.label] = sam(
                        acc_pct / 100.0, energy_j, preset)
            except MetricDomainError as exc:
                error = str(exc)
                sam_values = {}
        rows.append(ScoreRow(
            model_name=name,
            acc_pct=acc_pct,
            time_s=time_s,
            avg_power_mw=power_mw,
            energy_j=energy_j,
            sam_values=sam_values,
            net_score=ns,
            error=error,
        ))
    return rows
