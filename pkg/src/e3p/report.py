"""Ranked tables, rank-gap analysis, and deterministic serialization.

``emit`` produces byte-identical output for identical inputs in four
formats: ``markdown`` (display rounding: 2 decimals for scores, power and
energy, 3 for time), ``csv`` (full precision), ``json`` (full precision),
and ``plotdata`` (CSV of ``x,y,label,series`` triplets for external
plotting tools). Everything here is pure.
"""

from __future__ import annotations

import io
import csv as _csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ReportError
from .metrics import ScoreRow
from .screening import ScreenedSet

#: metadata keys every ranked table carries
_METADATA_KEYS = ("device", "dataset", "rail_selection", "window_mode")

_ASCENDING_KEYS = ("energy", "time")


@dataclass(frozen=True)
class RankedTable:
    """Score rows sorted by one key, with provenance metadata."""

    title: str
    sort_key: str
    rows: tuple[ScoreRow, ...]
    metadata: Mapping[str, str]


@dataclass(frozen=True)
class GapReport:
    """Rank disagreement between two orderings of the same model set."""

    ranking_a: tuple[str, ...]
    ranking_b: tuple[str, ...]
    kendall_tau: float
    leader_flips: tuple[tuple[str, int, int], ...]
    dropped: tuple[str, ...] = ()
    top_k: int = 3


def _key_value(row: ScoreRow, key: str) -> float:
    if key == "net_score":
        value = row.net_score
    elif key == "energy":
        value = row.energy_j
    elif key == "time":
        value = row.time_s
    else:
        value = row.sam_values.get(key)
    if value is None:
        raise ReportError(
            f"row {row.model_name!r} has no value for sort key {key!r}"
            + (f" (row error: {row.error})" if row.error else ""))
    return value


def rank(rows: Sequence[ScoreRow], key: str, title: str = "",
         metadata: Mapping[str, str] | None = None) -> RankedTable:
    """Sort rows by ``key`` into a RankedTable.

    ``net_score`` and SAM preset keys sort descending; ``energy`` and
    ``time`` ascending. Ties break by model name, so the order is total and
    independent of input permutation.

    Raises:
        ReportError: if any row is missing the key value.
    """
    ascending = key in _ASCENDING_KEYS
    decorated = [(_key_value(row, key), row) for row in rows]
    decorated.sort(key=lambda pair: (
        pair[0] if ascending else -pair[0], pair[1].model_name))
    meta = {k: "unknown" for k in _METADATA_KEYS}
    meta.update(metadata or {})
    return RankedTable(title=title, sort_key=key,
                       rows=tuple(row for _, row in decorated),
                       metadata=meta)


def _count_inversions(seq: list[int]) -> int:
    """Merge-sort inversion count (pairs out of order)."""
    if len(seq) <= 1:
        return 0
    mid = len(seq) // 2
    left, right = seq[:mid], seq[mid:]
    inversions = _count_inversions(left) + _count_inversions(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            j += 1
            inversions += len(left) - i
    seq[:] = merged + left[i:] + right[j:]
    return inversions


def kendall_tau(ranking_a: Sequence[str], ranking_b: Sequence[str]) -> float:
    """Tau-a rank correlation: (concordant - discordant) / (n(n-1)/2).

    Both arguments are orderings of the same duplicate-free name set.
    Computed via inversion counting; with no ties, discordant pairs are
    exactly the inversions of one ranking viewed in the other's order.
    """
    set_a, set_b = set(ranking_a), set(ranking_b)
    if len(set_a) != len(ranking_a) or len(set_b) != len(ranking_b):
        raise ReportError("rankings must not contain duplicate names")
    if set_a != set_b:
        missing = sorted(set_a ^ set_b)
        raise ReportError(f"rankings cover different name sets; "
                          f"mismatched: {missing}")
    n = len(ranking_a)
    if n < 2:
        raise ReportError("rank correlation needs at least two names")
    pos_a = {name: i for i, name in enumerate(ranking_a)}
    discordant = _count_inversions([pos_a[name] for name in ranking_b])
    total = n * (n - 1) // 2
    concordant = total - discordant
    return (concordant - discordant) / total


def gap_report(agnostic: ScreenedSet, measured: RankedTable,
               top_k: int = 3) -> GapReport:
    """Quantify how the metadata-only ranking disagrees with measurement.

    Names present in only one ranking are dropped (and listed). A model
    "flips" when it is in the top ``top_k`` of one ranking but not the
    other; flips are ordered by screened rank.

    Raises:
        ReportError: if the rankings share fewer than two names.
    """
    names_a = [card.name for card, _ in agnostic.survivors]
    names_b = [row.model_name for row in measured.rows]
    common = set(names_a) & set(names_b)
    if not common:
        raise ReportError("rankings have no model names in common")
    dropped = tuple(sorted(set(names_a) ^ set(names_b)))
    ranking_a = tuple(n for n in names_a if n in common)
    ranking_b = tuple(n for n in names_b if n in common)
    tau = kendall_tau(ranking_a, ranking_b)
    rank_a = {name: i + 1 for i, name in enumerate(ranking_a)}
    rank_b = {name: i + 1 for i, name in enumerate(ranking_b)}
    flips = tuple(sorted(
        ((name, rank_a[name], rank_b[name]) for name in common
         if (rank_a[name] <= top_k) != (rank_b[name] <= top_k)),
        key=lambda item: (item[1], item[0])))
    return GapReport(ranking_a=ranking_a, ranking_b=ranking_b,
                     kendall_tau=tau, leader_flips=flips,
                     dropped=dropped, top_k=top_k)


# --- formatting helpers -------------------------------------------------------

def _fmt(value, spec: str) -> str:
    return "" if value is None else format(value, spec)


def _repr_or_blank(value) -> str:
    return "" if value is None else repr(float(value))


def _sam_labels(rows: Sequence[ScoreRow]) -> list[str]:
    labels: list[str] = []
    for row in rows:
        for label in row.sam_values:
            if label not in labels:
                labels.append(label)
    return labels


def _markdown_table(header: list[str], body: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(" --- " for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines) + "\n"


def _csv_bytes(header: list[str], body: list[list[str]]) -> bytes:
    buf = io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue().encode("utf-8")


def _plotdata(points: list[tuple[float, float, str, str]]) -> bytes:
    return _csv_bytes(
        ["x", "y", "label", "series"],
        [[_repr_or_blank(x), _repr_or_blank(y), label, series]
         for x, y, label, series in points])


# --- emit: RankedTable ----------------------------------------------------------

def _table_markdown(table: RankedTable) -> bytes:
    labels = _sam_labels(table.rows)
    has_ns = any(row.net_score is not None for row in table.rows)
    out = []
    if table.title:
        out.append(f"# {table.title}\n\n")
    meta = table.metadata
    out.append(
        f"device: {meta['device']} | dataset: {meta['dataset']} | "
        f"rails: {meta['rail_selection']} | window: {meta['window_mode']} | "
        f"sorted by: {table.sort_key}\n\n")
    header = ["Model", "Acc (%)", "Time (s)", "Power (mW)", "Energy (J)"]
    header += [label.upper() for label in labels]
    if has_ns:
        header.append("NetScore")
    body = []
    for row in table.rows:
        cells = [row.model_name, _fmt(row.acc_pct, ".2f"),
                 _fmt(row.time_s, ".3f"), _fmt(row.avg_power_mw, ".2f"),
                 _fmt(row.energy_j, ".2f")]
        cells += [_fmt(row.sam_values.get(label), ".2f") for label in labels]
        if has_ns:
            cells.append(_fmt(row.net_score, ".2f"))
        body.append(cells)
    out.append(_markdown_table(header, body))
    return "".join(out).encode("utf-8")


def _table_csv(table: RankedTable) -> bytes:
    labels = _sam_labels(table.rows)
    header = ["model_name", "acc_pct", "time_s", "avg_power_mw", "energy_j",
              *labels, "net_score", "error"]
    body = []
    for row in table.rows:
        body.append([
            row.model_name, _repr_or_blank(row.acc_pct),
            _repr_or_blank(row.time_s), _repr_or_blank(row.avg_power_mw),
            _repr_or_blank(row.energy_j),
            *[_repr_or_blank(row.sam_values.get(label)) for label in labels],
            _repr_or_blank(row.net_score), row.error or "",
        ])
    return _csv_bytes(header, body)


def _table_json(table: RankedTable) -> bytes:
    doc = {
        "schema": "e3p-table/1",
        "title": table.title,
        "sort_key": table.sort_key,
        "metadata": dict(table.metadata),
        "rows": [{
            "model_name": row.model_name,
            "acc_pct": row.acc_pct,
            "time_s": row.time_s,
            "avg_power_mw": row.avg_power_mw,
            "energy_j": row.energy_j,
            "sam_values": dict(row.sam_values),
            "net_score": row.net_score,
            "error": row.error,
        } for row in table.rows],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _table_plotdata(table: RankedTable) -> bytes:
    points = []
    for row in table.rows:
        points.append((row.energy_j, row.acc_pct, row.model_name,
                       "energy_vs_acc"))
    for row in table.rows:
        points.append((row.time_s, row.acc_pct, row.model_name,
                       "time_vs_acc"))
    return _plotdata(points)


# --- emit: ScreenedSet ------------------------------------------------------------

def _screen_markdown(result: ScreenedSet) -> bytes:
    header = ["Model", "Params (M)", "MACs (G)", "Acc (%)", "NetScore"]
    body = [[card.name, f"{card.params_m:g}", f"{card.macs_g:g}",
             f"{card.top1_acc_pct:.2f}", f"{score:.2f}"]
            for card, score in result.survivors]
    out = [_markdown_table(header, body)]
    if result.rejected:
        out.append("\nRejected:\n")
        out += [f"- {card.name}: {reason}\n"
                for card, reason in result.rejected]
    return "".join(out).encode("utf-8")


def _screen_csv(result: ScreenedSet) -> bytes:
    header = ["name", "params_m", "macs_g", "top1_acc_pct", "net_score",
              "status", "reason"]
    body = [[card.name, repr(card.params_m), repr(card.macs_g),
             repr(card.top1_acc_pct), repr(score), "pass", ""]
            for card, score in result.survivors]
    body += [[card.name, repr(card.params_m), repr(card.macs_g),
              repr(card.top1_acc_pct), "", "rejected", reason]
             for card, reason in result.rejected]
    return _csv_bytes(header, body)


def _screen_json(result: ScreenedSet) -> bytes:
    doc = {
        "schema": "e3p-screen/1",
        "policy": {
            "min_acc_pct": result.policy.min_acc_pct,
            "max_params_m": result.policy.max_params_m,
            "max_macs_g": result.policy.max_macs_g,
        },
        "used_pareto": result.used_pareto,
        "survivors": [{
            "name": card.name,
            "params_m": card.params_m,
            "macs_g": card.macs_g,
            "top1_acc_pct": card.top1_acc_pct,
            "net_score": score,
        } for card, score in result.survivors],
        "rejected": [{"name": card.name, "reason": reason}
                     for card, reason in result.rejected],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _screen_plotdata(result: ScreenedSet) -> bytes:
    points = []
    for card, _ in result.survivors:
        points.append((card.macs_g, card.top1_acc_pct, card.name,
                       "macs_vs_acc"))
    for card, _ in result.survivors:
        points.append((card.params_m, card.top1_acc_pct, card.name,
                       "params_vs_acc"))
    for card, _ in result.rejected:
        points.append((card.macs_g, card.top1_acc_pct, card.name,
                       "macs_vs_acc_rejected"))
    for card, _ in result.rejected:
        points.append((card.params_m, card.top1_acc_pct, card.name,
                       "params_vs_acc_rejected"))
    return _plotdata(points)


# --- emit: GapReport -----------------------------------------------------------------

def _gap_markdown(report: GapReport) -> bytes:
    out = [f"Kendall tau: {report.kendall_tau:.4f} over "
           f"{len(report.ranking_a)} models "
           f"(top-{report.top_k} flips: {len(report.leader_flips)})\n\n"]
    if report.leader_flips:
        out.append(_markdown_table(
            ["Model", "Rank (screened)", "Rank (measured)"],
            [[name, str(ra), str(rb)]
             for name, ra, rb in report.leader_flips]))
    if report.dropped:
        out.append("\nDropped (present in only one ranking): "
                   + ", ".join(report.dropped) + "\n")
    return "".join(out).encode("utf-8")


def _gap_json(report: GapReport) -> bytes:
    doc = {
        "schema": "e3p-gap/1",
        "kendall_tau": report.kendall_tau,
        "top_k": report.top_k,
        "ranking_screened": list(report.ranking_a),
        "ranking_measured": list(report.ranking_b),
        "leader_flips": [
            {"model_name": name, "rank_screened": ra, "rank_measured": rb}
            for name, ra, rb in report.leader_flips],
        "dropped": list(report.dropped),
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _gap_csv(report: GapReport) -> bytes:
    return _csv_bytes(
        ["model_name", "rank_screened", "rank_measured"],
        [[name, str(ra), str(rb)] for name, ra, rb in report.leader_flips])


def _gap_plotdata(report: GapReport) -> bytes:
    rank_b = {name: i + 1 for i, name in enumerate(report.ranking_b)}
    return _plotdata([
        (float(i + 1), float(rank_b[name]), name, "rank_shift")
        for i, name in enumerate(report.ranking_a)])


_EMITTERS = {
    RankedTable: {"markdown": _table_markdown, "csv": _table_csv,
                  "json": _table_json, "plotdata": _table_plotdata},
    ScreenedSet: {"markdown": _screen_markdown, "csv": _screen_csv,
                  "json": _screen_json, "plotdata": _screen_plotdata},
    GapReport: {"markdown": _gap_markdown, "csv": _gap_csv,
                "json": _gap_json, "plotdata": _gap_plotdata},
}

FORMATS = ("markdown", "csv", "json", "plotdata")


def emit(obj, fmt: str) -> bytes:
    """Serialize a RankedTable, ScreenedSet, or GapReport to bytes.

    Raises:
        ReportError: for unsupported formats or object types.
    """
    emitters = _EMITTERS.get(type(obj))
    if emitters is None:
        raise ReportError(f"cannot emit objects of type "
                          f"{type(obj).__name__}")
    if fmt not in emitters:
        raise ReportError(
            f"unsupported format {fmt!r}; choose from {sorted(emitters)}")
    return emitters[fmt](obj)
