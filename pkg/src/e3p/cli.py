"""Command-line entry point: screen -> measure/replay -> rank -> report.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error. The
``E3P_LOG`` environment variable (DEBUG/INFO/WARNING/ERROR) controls log
verbosity. The workload command for ``measure`` is passed verbatim after
``--`` with no shell interpretation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from types import SimpleNamespace

from . import __version__
from .config import load_kv_config
from .errors import (
    ConfigError,
    PipelineError,
    RegistryError,
    ReportError,
    ScreeningError,
    SessionError,
)
from .measurement import (
    WorkloadSpec,
    calibrate_idle,
    load_trial_windows,
    replay_session,
    report_from_json,
    report_to_json,
    run_session,
)
from .metrics import PRESETS, score_rows
from .registry import load_registry
from .report import emit, gap_report, rank
from .screening import ThresholdPolicy, screen
from .telemetry import (
    DEFAULT_GPU_SELECTION,
    DEFAULT_TX2_SELECTION,
    RailSelection,
    TelemetrySource,
    sniff_dialect,
)

logger = logging.getLogger(__name__)

ROWS_SCHEMA = "e3p-rows/1"
FAILURE_SCHEMA = "e3p-session-failure/1"

_USAGE_ERRORS = (ConfigError, RegistryError, ScreeningError, ReportError)


def _setup_logging() -> None:
    level_name = os.environ.get("E3P_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _write_output(data: bytes, target: str | None) -> None:
    if target in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(target).write_bytes(data)


def _resolve_source(spec: str, interval: int, dialect: str) -> TelemetrySource:
    name = spec.replace("-", "_")
    if name in ("tegrastats", "nvidia_smi"):
        return TelemetrySource(kind=name, sample_interval_ms=interval)
    return TelemetrySource(kind="recorded_log", sample_interval_ms=interval,
                           path=spec, dialect=dialect)


def _default_selection(source: TelemetrySource) -> RailSelection:
    if source.kind == "tegrastats":
        return DEFAULT_TX2_SELECTION
    if source.kind == "nvidia_smi":
        return DEFAULT_GPU_SELECTION
    dialect = source.dialect
    if dialect == "auto":
        try:
            with open(source.path, encoding="utf-8", errors="replace") as fh:
                first = next((l for l in fh if l.strip()), "")
            dialect = sniff_dialect(first) if first else "nvidia_smi"
        except OSError as exc:
            raise ConfigError(f"cannot read log {source.path}: {exc}") from None
    if dialect == "tegrastats":
        return DEFAULT_TX2_SELECTION
    return DEFAULT_GPU_SELECTION


def _resolve_rails(spec: str, source: TelemetrySource) -> RailSelection:
    if spec == "auto":
        return _default_selection(source)
    return RailSelection.parse(spec)


# --- screen ---------------------------------------------------------------------

def cmd_screen(args, workload_argv) -> int:
    registry = load_registry(args.registry, fmt=args.registry_format)
    policy = ThresholdPolicy(min_acc_pct=args.min_acc,
                             max_params_m=args.max_params,
                             max_macs_g=args.max_macs)
    result = screen(registry, policy, use_pareto=args.pareto)
    _write_output(emit(result, args.format), args.output)
    return 0


# --- measure / replay --------------------------------------------------------------

def _merged(args, config: dict, key: str, default):
    """CLI flag if given, else config value, else default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def cmd_measure(args, workload_argv) -> int:
    config = load_kv_config(args.config) if args.config else {}

    command = workload_argv
    if command is None:
        command = config.get("command")
        if isinstance(command, str):
            command = [command]
    if not command:
        print("error: no workload command; pass it after '--' or set "
              "'command' in the session config", file=sys.stderr)
        return 2

    source = _resolve_source(
        str(_merged(args, config, "source", "nvidia-smi")),
        int(_merged(args, config, "interval", 1000)),
        str(_merged(args, config, "dialect", "auto")))
    sel = _resolve_rails(str(_merged(args, config, "rails", "auto")), source)
    trials = int(_merged(args, config, "trials", 3))
    window = str(_merged(args, config, "window", "handshake"))
    cooldown = int(_merged(args, config, "cooldown_ms", 0))
    model = str(_merged(args, config, "model", "unknown"))
    device = str(_merged(args, config, "device", "unknown"))
    dataset = str(_merged(args, config, "dataset", "unknown"))
    out = _merged(args, config, "out", "-")
    idle_ms = int(_merged(args, config, "idle_ms", 0))

    registry_card = None
    registry_path = _merged(args, config, "registry", None)
    if registry_path:
        registry_card = load_registry(registry_path).lookup(model)
        if registry_card is None:
            logger.warning("model %r not found in registry %s",
                           model, registry_path)

    idle_power = None
    if idle_ms > 0:
        idle_power = calibrate_idle(source, sel, idle_ms)
        logger.info("idle power: %.2f mW over %d ms", idle_power, idle_ms)

    workload = WorkloadSpec(
        command=tuple(str(part) for part in command),
        expected_handshake=(window == "handshake"))
    try:
        report = run_session(
            workload, source, sel, trials, window_mode=window,
            cooldown_ms=cooldown, model_name=model, device_label=device,
            dataset_label=dataset, registry_card=registry_card,
            idle_power_mw=idle_power)
    except SessionError as exc:
        _write_failure(exc, out)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_output(report_to_json(report, args.include_samples).encode(),
                  out)
    if report.degraded:
        failed = [t.index for t in report.trials if t.failed]
        print(f"warning: session degraded; failed trial(s): {failed}",
              file=sys.stderr)
        return 1
    return 0


def _write_failure(exc: SessionError, out) -> None:
    from .measurement import _trial_doc
    doc = {
        "schema": FAILURE_SCHEMA,
        "error": str(exc),
        "trials": [_trial_doc(t, False) for t in exc.trials],
    }
    _write_output((json.dumps(doc, indent=2) + "\n").encode(), out)


def cmd_replay(args, workload_argv) -> int:
    source = TelemetrySource(kind="recorded_log",
                             sample_interval_ms=args.interval,
                             path=args.log, dialect=args.dialect)
    sel = _resolve_rails(args.rails, source)
    windows, window_mode = load_trial_windows(args.windows)
    registry_card = None
    if args.registry:
        registry_card = load_registry(args.registry).lookup(args.model)
    try:
        report = replay_session(
            source, windows, sel, window_mode=window_mode,
            model_name=args.model, device_label=args.device,
            dataset_label=args.dataset, registry_card=registry_card)
    except SessionError as exc:
        _write_failure(exc, args.out)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_output(report_to_json(report, args.include_samples).encode(),
                  args.out)
    if report.degraded:
        print("warning: replay degraded; some windows had no usable data",
              file=sys.stderr)
        return 1
    return 0


# --- rank / report -----------------------------------------------------------------

def _load_row_inputs(paths) -> tuple[list, dict[str, set]]:
    """Load measurement inputs (full reports or row files) into row records."""
    records = []
    labels: dict[str, set] = {"device": set(), "dataset": set(),
                              "rail_selection": set(), "window_mode": set()}
    for path in paths:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read input {path}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        schema = doc.get("schema") if isinstance(doc, dict) else None
        if schema == "e3p-report/1":
            report = report_from_json(text)
            records.append(report)
            labels["device"].add(report.device_label)
            labels["dataset"].add(report.dataset_label)
            labels["rail_selection"].add(report.rail_selection)
            labels["window_mode"].add(report.window_mode)
        elif schema == ROWS_SCHEMA:
            labels["device"].add(doc.get("device_label", "unknown"))
            labels["dataset"].add(doc.get("dataset_label", "unknown"))
            for i, row in enumerate(doc.get("rows", ())):
                missing = [k for k in ("model_name", "acc_pct", "time_s",
                                       "avg_power_mw", "energy_j")
                           if k not in row]
                if missing:
                    raise ConfigError(
                        f"{path}: row {i} missing field(s) {missing}")
                records.append(SimpleNamespace(
                    model_name=row["model_name"], acc_pct=row["acc_pct"],
                    time_s=row["time_s"], avg_power_mw=row["avg_power_mw"],
                    energy_j=row["energy_j"]))
        else:
            raise ConfigError(
                f"{path}: unsupported input schema {schema!r} "
                f"(want e3p-report/1 or {ROWS_SCHEMA})")
    return records, labels


def _label(values: set) -> str:
    if not values:
        return "unknown"
    if len(values) == 1:
        return next(iter(values))
    return "mixed"


def _build_table(args):
    records, labels = _load_row_inputs(args.inputs)
    if not records:
        raise ConfigError("no measurement rows found in the given inputs")
    presets = [PRESETS[name] for name in (args.presets or ["sam5", "sam1"])]
    registry = load_registry(args.registry) if args.registry else None
    rows = score_rows(records, presets, registry=registry)
    invalid = [r for r in rows if r.error]
    for row in invalid:
        print(f"warning: skipping {row.model_name!r}: {row.error}",
              file=sys.stderr)
    valid = [r for r in rows if not r.error]
    key = args.key or presets[0].label
    metadata = {name: _label(values) for name, values in labels.items()}
    return rank(valid, key, title=args.title, metadata=metadata)


def cmd_rank(args, workload_argv) -> int:
    table = _build_table(args)
    _write_output(emit(table, args.format), args.output)
    return 0


def cmd_report(args, workload_argv) -> int:
    table = _build_table(args)
    if not args.gap:
        _write_output(emit(table, args.format), args.output)
        return 0
    screened = screen(load_registry(args.gap), ThresholdPolicy())
    gap = gap_report(screened, table, top_k=args.top_k)
    if args.gap_output:
        _write_output(emit(table, args.format), args.output)
        _write_output(emit(gap, args.format), args.gap_output)
    elif args.format == "markdown":
        _write_output(emit(table, "markdown") + b"\n"
                      + emit(gap, "markdown"), args.output)
    elif args.format == "json":
        bundle = {
            "schema": "e3p-report-bundle/1",
            "table": json.loads(emit(table, "json")),
            "gap": json.loads(emit(gap, "json")),
        }
        _write_output((json.dumps(bundle, indent=2) + "\n").encode(),
                      args.output)
    else:
        raise ReportError(
            f"--gap with format {args.format!r} needs --gap-output to "
            f"separate the two documents")
    return 0


# --- parser ---------------------------------------------------------------------------

def _add_output_flags(parser, formats=("markdown", "csv", "json", "plotdata")):
    parser.add_argument("--format", choices=formats, default="markdown",
                        help="output format (default: markdown)")
    parser.add_argument("-o", "--output", default=None, metavar="PATH",
                        help="write output to PATH instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="e3p",
        description="Two-stage energy-efficiency benchmarking pipeline: "
                    "screen model candidates from metadata, then measure "
                    "and rank real inference workloads.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("screen", help="rank candidate models by NetScore")
    p.add_argument("--registry", required=True, metavar="PATH",
                   help="model catalog (CSV or JSON)")
    p.add_argument("--registry-format", choices=("csv", "json"), default=None)
    p.add_argument("--min-acc", type=float, default=79.0,
                   help="minimum top-1 accuracy in percent (default 79)")
    p.add_argument("--max-params", type=float, default=23.0,
                   help="exclusive parameter bound in millions (default 23)")
    p.add_argument("--max-macs", type=float, default=5.0,
                   help="exclusive MACs bound in billions (default 5.0)")
    p.add_argument("--pareto", action="store_true",
                   help="also drop Pareto-dominated candidates")
    _add_output_flags(p)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser(
        "measure",
        help="run a workload while sampling power; writes report JSON",
        description="Everything after '--' is the workload command, run "
                    "verbatim. The workload should print E3P_BEGIN and "
                    "'E3P_END [acc]' around its measured region.")
    p.add_argument("--config", metavar="PATH",
                   help="session config file (key = value lines)")
    p.add_argument("--source", metavar="SRC",
                   help="tegrastats, nvidia-smi, or a recorded log path "
                        "(paced replay)")
    p.add_argument("--dialect",
                   choices=("auto", "tegrastats", "nvidia_smi",
                            "normalized_csv"), default=None)
    p.add_argument("--interval", type=int, default=None, metavar="MS",
                   help="telemetry sample interval (default 1000 ms)")
    p.add_argument("--rails", default=None, metavar="SPEC",
                   help="rail selection, e.g. sum:VDD_SYS_GPU+VDD_SYS_CPU "
                        "(default: auto per source)")
    p.add_argument("--trials", type=int, default=None,
                   help="number of sequential trials (default 3)")
    p.add_argument("--window", choices=("handshake", "process"), default=None,
                   help="measured region (default handshake)")
    p.add_argument("--cooldown-ms", type=int, default=None, dest="cooldown_ms")
    p.add_argument("--model", default=None, help="model label for the report")
    p.add_argument("--device", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--registry", default=None, metavar="PATH",
                   help="model catalog used as accuracy fallback")
    p.add_argument("--idle-ms", type=int, default=None, dest="idle_ms",
                   help="calibrate idle power for this long before trials")
    p.add_argument("--include-samples", action="store_true",
                   help="embed raw power samples in the report JSON")
    p.add_argument("--out", default=None, metavar="PATH",
                   help="report path (default: stdout)")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("replay",
                       help="recompute a report from a recorded telemetry "
                            "log and a trial-windows file")
    p.add_argument("--log", required=True, metavar="PATH")
    p.add_argument("--windows", required=True, metavar="PATH",
                   help="JSON file with schema e3p-windows/1")
    p.add_argument("--dialect",
                   choices=("auto", "tegrastats", "nvidia_smi",
                            "normalized_csv"), default="auto")
    p.add_argument("--interval", type=int, default=1000, metavar="MS")
    p.add_argument("--rails", default="auto", metavar="SPEC")
    p.add_argument("--model", default="unknown")
    p.add_argument("--device", default="unknown")
    p.add_argument("--dataset", default="unknown")
    p.add_argument("--registry", default=None, metavar="PATH")
    p.add_argument("--include-samples", action="store_true")
    p.add_argument("--out", default=None, metavar="PATH")
    p.set_defaults(func=cmd_replay)

    for name, helptext in (
            ("rank", "rank measurement reports by a score"),
            ("report", "rank reports and optionally compare against the "
                       "screening order")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", dest="inputs", action="append", default=[],
                       required=True, metavar="PATH",
                       help="report JSON (e3p-report/1) or rows JSON "
                            "(e3p-rows/1); repeatable")
        p.add_argument("--preset", dest="presets", action="append",
                       choices=sorted(PRESETS), default=None,
                       help="SAM preset(s) to evaluate (default: sam5, sam1)")
        p.add_argument("--key", default=None,
                       choices=("sam5", "sam1", "net_score", "energy",
                                "time"),
                       help="sort key (default: first preset)")
        p.add_argument("--registry", default=None, metavar="PATH",
                       help="model catalog for NetScore columns")
        p.add_argument("--title", default="")
        _add_output_flags(p)
        if name == "report":
            p.add_argument("--gap", default=None, metavar="REGISTRY",
                           help="emit a rank-gap report against this "
                                "catalog's NetScore order")
            p.add_argument("--top-k", type=int, default=3, dest="top_k",
                           help="leader-flip threshold (default 3)")
            p.add_argument("--gap-output", default=None, metavar="PATH",
                           help="write the gap report here instead of "
                                "inline")
            p.set_defaults(func=cmd_report)
        else:
            p.set_defaults(func=cmd_rank)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:]) if argv is None else list(argv)

    workload_argv = None
    if argv and argv[0] == "measure" and "--" in argv:
        split = argv.index("--")
        workload_argv = argv[split + 1:]
        argv = argv[:split]

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, workload_argv)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
