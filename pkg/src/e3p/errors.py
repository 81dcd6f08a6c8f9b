"""Typed errors shared by all pipeline stages.

Every error raised on purpose by this package derives from
:class:`PipelineError`, so callers (and the CLI) can distinguish expected
failure modes from genuine bugs.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PipelineError):
    """Invalid configuration value (thresholds, intervals, flags, files)."""


class RegistryError(PipelineError):
    """Model catalog could not be loaded or failed validation."""


class ScreeningError(PipelineError):
    """Screening produced no usable result (e.g. empty survivor set)."""


class MetricDomainError(PipelineError, ValueError):
    """A metric was evaluated outside its mathematical domain."""


class TelemetryError(PipelineError):
    """Power-telemetry stream failure (spawn, ordering, stream contract)."""


class LineParseError(TelemetryError):
    """A telemetry text line could not be parsed.

    Carries the offending raw line so log positions can be reported upstream.
    """

    def __init__(self, message: str, line: str):
        super().__init__(f"{message}: {line!r}")
        self.line = line


class RailSelectionError(TelemetryError):
    """A rail selection references rails that are absent or is malformed."""


class MeasurementError(PipelineError):
    """Measurement harness failure outside the workload itself."""


class ProtocolError(MeasurementError):
    """The workload did not follow the stdout handshake protocol."""


class InsufficientTelemetryError(MeasurementError):
    """Not enough power samples to compute a result."""


class SessionError(MeasurementError):
    """An entire measurement session failed (no usable trial).

    ``trials`` carries whatever per-trial records were collected before the
    session was abandoned, so partial artifacts can still be written.
    """

    def __init__(self, message: str, trials: tuple = ()):
        super().__init__(message)
        self.trials = trials


class ReportError(PipelineError):
    """Ranking or report generation failed (missing keys, bad inputs)."""
