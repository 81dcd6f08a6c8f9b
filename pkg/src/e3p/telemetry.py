"""Power-telemetry parsing and streaming.

Turns the text output of tegrastats (Jetson) and ``nvidia-smi
--query-gpu=power.draw`` (discrete GPU) into timestamped
:class:`PowerSample` records, either live from a spawned tool or from a
recorded log file. All stored powers are milliwatts; watts appear only at
the nvidia-smi parse boundary.

Accepted recorded-log dialects:
    tegrastats      raw tool output; timestamps synthesized at the sample
                    interval, one tick per line.
    nvidia_smi      raw ``power.draw`` CSV rows (``13.45 W``); header rows
                    are skipped, ``N/A`` rows consume a tick but yield no
                    sample.
    normalized_csv  ``t_ms,rail,mw`` with one row per rail per sample;
                    embedded timestamps are replayed bit-exactly.

The parsers are pure and reentrant; a stream has one producer and one
consumer.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import re
import shutil
import subprocess
import time
from dataclasses import dataclass
from itertools import chain
from pathlib import Path
from typing import IO, Iterator

from .errors import ConfigError, LineParseError, RailSelectionError, TelemetryError

logger = logging.getLogger(__name__)

#: Rail name under which nvidia-smi board power is stored.
GPU_RAIL = "GPU"

MIN_SAMPLE_INTERVAL_MS = 50

_TEGRA_NAME_RE = re.compile(r"\bVDD_[A-Z0-9_]+\b")
_TEGRA_PAIR_RE = re.compile(r"\b(VDD_[A-Z0-9_]+)\s+(\S+)")
_TEGRA_VALUE_RE = re.compile(r"^(\d+(?:\.\d+)?)/(\d+(?:\.\d+)?)$")
_NVSMI_VALUE_RE = re.compile(r"^([0-9]+(?:\.[0-9]+)?)\s*W$")
_NVSMI_HEADER = "power.draw [w]"
_NORMALIZED_HEADER = ("t_ms", "rail", "mw")


class RowSignal(enum.Enum):
    """Non-sample outcomes of parsing one nvidia-smi row."""

    HEADER = "header"    # column header row, skip silently
    MISSING = "missing"  # N/A reading, drop the sample (never zero-fill)


@dataclass(frozen=True)
class PowerSample:
    """One telemetry reading: per-rail instantaneous power in milliwatts.

    ``t_ms`` is milliseconds since sampler start and is nondecreasing
    within a stream.
    """

    t_ms: float
    rails: dict[str, float]

    def __post_init__(self):
        if not self.rails:
            raise TelemetryError("power sample has no rails")
        if not math.isfinite(self.t_ms):
            raise TelemetryError(f"non-finite sample timestamp {self.t_ms!r}")
        for rail, mw in self.rails.items():
            if not isinstance(mw, (int, float)) or isinstance(mw, bool) \
                    or not math.isfinite(mw) or mw < 0:
                raise TelemetryError(
                    f"rail {rail!r} has invalid power {mw!r} (want finite mW >= 0)")


@dataclass(frozen=True)
class RailSelection:
    """Which rails constitute 'the measured power' of a sample.

    Modes: ``single`` (one rail), ``sum`` (arithmetic sum of several),
    ``total_board`` (one rail that already covers the whole board).
    """

    mode: str
    rails: tuple[str, ...]

    def __post_init__(self):
        if self.mode not in ("single", "sum", "total_board"):
            raise RailSelectionError(f"unknown rail mode {self.mode!r}")
        if self.mode in ("single", "total_board") and len(self.rails) != 1:
            raise RailSelectionError(
                f"mode {self.mode!r} takes exactly one rail, got {self.rails!r}")
        if self.mode == "sum" and not self.rails:
            raise RailSelectionError("sum selection over an empty rail list")

    @classmethod
    def single(cls, name: str) -> "RailSelection":
        return cls("single", (name,))

    @classmethod
    def sum_of(cls, names) -> "RailSelection":
        return cls("sum", tuple(names))

    @classmethod
    def total_board(cls, name: str) -> "RailSelection":
        return cls("total_board", (name,))

    @classmethod
    def parse(cls, spec: str) -> "RailSelection":
        """Parse a selection string.

        Forms: ``single:GPU``, ``sum:A+B+C``, ``total_board:VDD_IN``,
        a bare rail name (single), or ``A+B`` (sum).
        """
        spec = spec.strip()
        if ":" in spec:
            mode, _, rest = spec.partition(":")
            names = tuple(n for n in rest.split("+") if n)
            return cls(mode.strip(), names)
        if "+" in spec:
            return cls.sum_of(n for n in spec.split("+") if n)
        if not spec:
            raise RailSelectionError("empty rail selection")
        return cls.single(spec)

    def label(self) -> str:
        """Canonical string form, usable with :meth:`parse`."""
        return f"{self.mode}:{'+'.join(self.rails)}"


#: Default "compute system" selection for a Jetson TX2; VDD_IN is the
#: total-board alternative. Configurable, and recorded in every report.
DEFAULT_TX2_SELECTION = RailSelection.sum_of(
    ("VDD_SYS_GPU", "VDD_SYS_CPU", "VDD_SYS_SOC", "VDD_SYS_DDR"))
DEFAULT_GPU_SELECTION = RailSelection.single(GPU_RAIL)


@dataclass(frozen=True)
class TelemetrySource:
    """Where power samples come from.

    ``kind`` is one of ``tegrastats``, ``nvidia_smi`` (live tools) or
    ``recorded_log`` (replay of a log file). ``command`` overrides the
    spawn argv for live kinds; ``path`` names the log for recorded ones.
    """

    kind: str
    sample_interval_ms: int = 1000
    path: str | Path | None = None
    command: tuple[str, ...] | None = None
    dialect: str = "auto"  # recorded_log: auto|tegrastats|nvidia_smi|normalized_csv

    def __post_init__(self):
        if self.kind not in ("tegrastats", "nvidia_smi", "recorded_log"):
            raise ConfigError(f"unknown telemetry source kind {self.kind!r}")
        interval = self.sample_interval_ms
        if not isinstance(interval, int) or isinstance(interval, bool) \
                or interval < MIN_SAMPLE_INTERVAL_MS:
            raise ConfigError(
                f"sample_interval_ms must be an integer >= "
                f"{MIN_SAMPLE_INTERVAL_MS}, got {interval!r}")
        if self.kind == "recorded_log" and self.path is None:
            raise ConfigError("recorded_log source requires a path")
        if self.dialect not in ("auto", "tegrastats", "nvidia_smi",
                                "normalized_csv"):
            raise ConfigError(f"unknown log dialect {self.dialect!r}")

    def spawn_argv(self) -> tuple[str, ...]:
        """Argument vector used to launch the live telemetry tool."""
        if self.command:
            return self.command
        if self.kind == "tegrastats":
            return ("tegrastats", "--interval", str(self.sample_interval_ms))
        if self.kind == "nvidia_smi":
            return ("nvidia-smi", "--query-gpu=power.draw",
                    "--format=csv,noheader",
                    f"--loop-ms={self.sample_interval_ms}")
        raise ConfigError("recorded_log sources are not spawned")


def parse_tegrastats_line(line: str, t_ms: float) -> PowerSample:
    """Parse one tegrastats output line into a PowerSample.

    Extracts every ``<RAIL> <current>/<average>`` token whose rail name
    matches ``VDD_[A-Z0-9_]+`` and keeps the CURRENT (first) value in mW;
    CPU/RAM/GR3D and other fields are ignored. The tool's running average
    spans time outside any measurement window, so window averages are
    always recomputed from the current values.

    Raises:
        LineParseError: if no rail token is present, a rail has no value,
            or a value is not ``<number>/<number>``.
    """
    names = _TEGRA_NAME_RE.findall(line)
    if not names:
        raise LineParseError("no power rails found", line)
    rails: dict[str, float] = {}
    pairs = _TEGRA_PAIR_RE.findall(line)
    for rail, token in pairs:
        match = _TEGRA_VALUE_RE.match(token)
        if match is None:
            raise LineParseError(
                f"malformed power value for rail {rail}", line)
        mw = float(match.group(1))
        if not math.isfinite(mw):
            raise LineParseError(
                f"power value out of range for rail {rail}", line)
        rails[rail] = mw
    if len(pairs) != len(names):
        raise LineParseError("rail token without a power value", line)
    return PowerSample(t_ms=t_ms, rails=rails)


def parse_nvidia_smi_row(row: str, t_ms: float) -> PowerSample | RowSignal:
    """Parse one row of ``--query-gpu=power.draw --format=csv`` output.

    ``13.45 W`` becomes 13450 mW under the ``GPU`` rail. Returns
    :data:`RowSignal.HEADER` for the column header and
    :data:`RowSignal.MISSING` for ``N/A`` readings; both are skip signals,
    not errors.

    Raises:
        LineParseError: for anything else that is not ``<number> W``.
    """
    text = row.strip()
    if text.lower() == _NVSMI_HEADER:
        return RowSignal.HEADER
    if text.upper() in ("N/A", "[N/A]"):
        return RowSignal.MISSING
    match = _NVSMI_VALUE_RE.match(text)
    if match is None:
        raise LineParseError("unparseable power.draw row", row)
    milliwatts = float(match.group(1)) * 1000.0
    if not math.isfinite(milliwatts):
        raise LineParseError("power value out of range", row)
    return PowerSample(t_ms=t_ms, rails={GPU_RAIL: milliwatts})


def sniff_dialect(first_line: str) -> str:
    """Detect the dialect of a recorded log from its first non-blank line."""
    text = first_line.strip()
    if text.lower().replace(" ", "").startswith(",".join(_NORMALIZED_HEADER)):
        return "normalized_csv"
    if "VDD_" in text:
        return "tegrastats"
    if (text.lower() == _NVSMI_HEADER or text.upper() in ("N/A", "[N/A]")
            or _NVSMI_VALUE_RE.match(text)):
        return "nvidia_smi"
    raise TelemetryError(
        f"cannot detect telemetry dialect from first line {text!r}")


def select_power(sample: PowerSample, sel: RailSelection) -> float:
    """Collapse a sample's rails into one mW figure per the selection.

    Raises:
        RailSelectionError: naming the first selected rail that is absent.
    """
    for rail in sel.rails:
        if rail not in sample.rails:
            raise RailSelectionError(
                f"rail {rail!r} not present in sample "
                f"(have {sorted(sample.rails)})")
    if sel.mode in ("single", "total_board"):
        return sample.rails[sel.rails[0]]
    return sum(sample.rails[rail] for rail in sel.rails)


class TelemetryStream:
    """Iterator of PowerSamples from a live tool or a recorded log.

    Yields samples in nondecreasing timestamp order until the underlying
    tool exits, the log is exhausted, or :meth:`close` is called. A live
    stream that ends before being closed sets ``premature_end`` and logs a
    warning; samples already yielded stay valid. A partial trailing line is
    discarded.

    ``on_error`` controls recorded/live parse failures: ``"raise"``
    propagates the typed error, ``"skip"`` drops the line, counts it in
    ``skipped_lines``, and keeps going.
    """

    def __init__(self, source: TelemetrySource, *,
                 epoch_monotonic: float | None = None,
                 on_error: str = "raise"):
        if on_error not in ("raise", "skip"):
            raise ConfigError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
        self.source = source
        self.on_error = on_error
        self.skipped_lines = 0
        self.premature_end = False
        self._closed = False
        self._proc: subprocess.Popen | None = None
        self._epoch = epoch_monotonic
        self._last_t: float | None = None
        if source.kind == "recorded_log":
            if not Path(source.path).exists():
                raise TelemetryError(f"recorded log not found: {source.path}")
            self._iter = self._iter_recorded()
        else:
            self._iter = self._iter_live()

    def __iter__(self) -> Iterator[PowerSample]:
        return self._monotonic_guard()

    def close(self) -> None:
        """Stop the stream; terminates the spawned tool for live kinds."""
        self._closed = True
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "TelemetryStream":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _monotonic_guard(self) -> Iterator[PowerSample]:
        for sample in self._iter:
            if self._last_t is not None and sample.t_ms < self._last_t:
                raise TelemetryError(
                    f"timestamps went backwards: {sample.t_ms} after "
                    f"{self._last_t}")
            self._last_t = sample.t_ms
            yield sample

    # --- recorded logs -----------------------------------------------------

    def _iter_recorded(self) -> Iterator[PowerSample]:
        path = Path(self.source.path)
        with path.open(encoding="utf-8", errors="replace") as fh:
            dialect = self.source.dialect
            first = None
            if dialect == "auto":
                for line in fh:
                    if line.strip():
                        first = line
                        break
                if first is None:
                    logger.info("recorded log %s is empty (end of stream)", path)
                    return
                dialect = sniff_dialect(first)
            if dialect == "normalized_csv":
                fh.seek(0)
                yield from self._iter_normalized(fh)
                return
            parse = (parse_tegrastats_line if dialect == "tegrastats"
                     else parse_nvidia_smi_row)
            interval = float(self.source.sample_interval_ms)
            tick = 0
            lines = chain([first], fh) if first is not None else fh
            for line in lines:
                if self._closed:
                    return
                if not line.strip():
                    continue
                try:
                    parsed = parse(line.rstrip("\n"), tick * interval)
                except LineParseError:
                    if self.on_error == "raise":
                        raise
                    self.skipped_lines += 1
                    logger.warning("skipping unparseable line in %s", path)
                    tick += 1
                    continue
                if parsed is RowSignal.HEADER:
                    continue
                tick += 1
                if parsed is RowSignal.MISSING:
                    continue
                yield parsed

    def _iter_normalized(self, fh: IO[str]) -> Iterator[PowerSample]:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != _NORMALIZED_HEADER:
            raise TelemetryError(
                f"normalized telemetry CSV must start with header "
                f"{','.join(_NORMALIZED_HEADER)!r}")
        current_t: float | None = None
        rails: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise TelemetryError(
                    f"normalized CSV line {lineno}: expected 3 columns, "
                    f"got {len(row)}")
            try:
                t = float(row[0])
                mw = float(row[2])
            except ValueError:
                raise TelemetryError(
                    f"normalized CSV line {lineno}: non-numeric field in "
                    f"{row!r}") from None
            rail = row[1].strip()
            if current_t is None or t == current_t:
                if rail in rails:
                    raise TelemetryError(
                        f"normalized CSV line {lineno}: duplicate rail "
                        f"{rail!r} at t={t}")
                current_t = t
                rails[rail] = mw
            else:
                yield PowerSample(t_ms=current_t, rails=rails)
                current_t, rails = t, {rail: mw}
            if self._closed:
                break
        if rails and not self._closed:
            yield PowerSample(t_ms=current_t, rails=rails)

    # --- live tools ----------------------------------------------------------

    def _iter_live(self) -> Iterator[PowerSample]:
        argv = self.source.spawn_argv()
        if shutil.which(argv[0]) is None:
            raise TelemetryError(f"telemetry tool not found: {argv[0]!r}")
        try:
            self._proc = subprocess.Popen(
                argv, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                text=True, bufsize=1)
        except OSError as exc:
            raise TelemetryError(f"failed to spawn {argv!r}: {exc}") from None
        if self._epoch is None:
            self._epoch = time.monotonic()
        parse = (parse_tegrastats_line if self.source.kind == "tegrastats"
                 else parse_nvidia_smi_row)
        try:
            for line in self._proc.stdout:
                if self._closed:
                    break
                if not line.endswith("\n"):
                    break  # partial line at stream end: discard
                if not line.strip():
                    continue
                t_ms = (time.monotonic() - self._epoch) * 1000.0
                try:
                    parsed = parse(line.rstrip("\n"), t_ms)
                except LineParseError:
                    if self.on_error == "raise":
                        raise
                    self.skipped_lines += 1
                    logger.warning("skipping unparseable telemetry line")
                    continue
                if isinstance(parsed, RowSignal):
                    continue
                yield parsed
        finally:
            if not self._closed:
                self.premature_end = True
                logger.warning(
                    "telemetry stream from %r ended before close; "
                    "partial samples retained", argv[0])
            self.close()


def open_stream(source: TelemetrySource, *,
                epoch_monotonic: float | None = None,
                on_error: str = "raise") -> TelemetryStream:
    """Open a telemetry stream for iteration. Close it when done."""
    return TelemetryStream(source, epoch_monotonic=epoch_monotonic,
                           on_error=on_error)


def write_normalized_csv(samples, fh: IO[str]) -> None:
    """Write samples in the normalized ``t_ms,rail,mw`` interchange form."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(_NORMALIZED_HEADER)
    for sample in samples:
        for rail in sorted(sample.rails):
            writer.writerow([repr(float(sample.t_ms)), rail,
                             repr(float(sample.rails[rail]))])
