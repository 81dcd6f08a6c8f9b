"""Ranking, rank-correlation, gap-report, and emit tests."""

import random

import pytest
from hypothesis import given, strategies as st

from e3p.errors import ReportError
from e3p.metrics import DEFAULT_PRESETS, score_rows
from e3p.registry import ModelCard, Registry
from e3p.report import GapReport, RankedTable, emit, gap_report, kendall_tau, rank
from e3p.screening import ThresholdPolicy, screen

from golden import CATALOG, CATALOG_ORDER, TX2_CIFAR10, TX2_IMAGENET
from oracles import kendall_tau_pairs


def rows_from(table):
    from types import SimpleNamespace
    return score_rows([
        SimpleNamespace(model_name=n, acc_pct=acc, time_s=t,
                        avg_power_mw=p, energy_j=e)
        for n, acc, t, p, e, _, _ in table
    ], DEFAULT_PRESETS)


def catalog_registry():
    return Registry(cards=tuple(
        ModelCard(n, p, m, a) for n, p, m, a, _ in CATALOG))


# --- rank ---------------------------------------------------------------------

def test_rank_tx2_cifar_by_sam5_puts_levit_conv_first():
    table = rank(rows_from(TX2_CIFAR10), "sam5")
    assert table.rows[0].model_name == "LeViT_Conv_192"
    assert table.rows[0].sam_values["sam5"] == pytest.approx(1.44, abs=0.005)


def test_rank_single_row():
    rows = rows_from(TX2_CIFAR10[:1])
    table = rank(rows, "sam5")
    assert [r.model_name for r in table.rows] == ["LeViT_Conv_192"]


def test_rank_energy_and_time_sort_ascending():
    rows = rows_from(TX2_IMAGENET)
    by_energy = rank(rows, "energy")
    energies = [r.energy_j for r in by_energy.rows]
    assert energies == sorted(energies)
    by_time = rank(rows, "time")
    times = [r.time_s for r in by_time.rows]
    assert times == sorted(times)


def test_rank_ties_break_by_name_and_input_order_is_irrelevant():
    rows = rows_from(TX2_CIFAR10)
    shuffled = list(rows)
    random.Random(7).shuffle(shuffled)
    a = rank(rows, "sam1")
    b = rank(shuffled, "sam1")
    assert [r.model_name for r in a.rows] == [r.model_name for r in b.rows]
    # equal-key groups are in lexicographic name order
    for prev, cur in zip(a.rows, a.rows[1:]):
        if prev.sam_values["sam1"] == cur.sam_values["sam1"]:
            assert prev.model_name < cur.model_name


def test_rank_missing_key_value_is_an_error():
    rows = rows_from(TX2_IMAGENET)
    with pytest.raises(ReportError, match="net_score"):
        rank(rows, "net_score")  # rows built without a registry
    with pytest.raises(ReportError):
        rank(rows, "sam42")


def test_rank_metadata_always_present():
    table = rank(rows_from(TX2_CIFAR10[:2]), "sam5")
    assert set(table.metadata) >= {
        "device", "dataset", "rail_selection", "window_mode"}
    labelled = rank(rows_from(TX2_CIFAR10[:2]), "sam5",
                    metadata={"device": "jetson-tx2"})
    assert labelled.metadata["device"] == "jetson-tx2"
    assert labelled.metadata["dataset"] == "unknown"


# --- kendall_tau -----------------------------------------------------------------

def test_tau_identical_and_reversed():
    names = ["a", "b", "c", "d", "e"]
    assert kendall_tau(names, list(names)) == 1.0
    assert kendall_tau(names, list(reversed(names))) == -1.0


def test_tau_is_symmetric():
    a = ["a", "b", "c", "d", "e", "f"]
    b = ["c", "a", "f", "b", "e", "d"]
    assert kendall_tau(a, b) == kendall_tau(b, a)


def test_tau_matches_pair_oracle_on_seeded_permutations():
    rng = random.Random(99)
    names = [f"m{i}" for i in range(8)]
    for _ in range(50):
        a = names[:]
        b = names[:]
        rng.shuffle(a)
        rng.shuffle(b)
        _, _, expected = kendall_tau_pairs(a, b)
        assert kendall_tau(a, b) == expected  # exact, both are ratios of ints


@given(st.permutations(list(range(9))))
def test_tau_matches_pair_oracle_property(perm):
    a = [f"n{i}" for i in range(9)]
    b = [f"n{i}" for i in perm]
    _, _, expected = kendall_tau_pairs(a, b)
    assert kendall_tau(a, b) == expected


def test_tau_input_validation():
    with pytest.raises(ReportError):
        kendall_tau(["a", "b"], ["a", "c"])
    with pytest.raises(ReportError):
        kendall_tau(["a", "a"], ["a", "a"])
    with pytest.raises(ReportError):
        kendall_tau(["a"], ["a"])


# --- gap_report ---------------------------------------------------------------------

def screened_catalog():
    return screen(catalog_registry(), ThresholdPolicy())


def test_gap_report_flags_the_screening_leader():
    measured = rank(rows_from(TX2_IMAGENET), "sam5")
    gap = gap_report(screened_catalog(), measured)
    assert gap.kendall_tau < 0.5
    assert ("EfficientViT-B1", 1, 11) in gap.leader_flips
    assert gap.dropped == ()
    # both rankings are permutations of the same name set
    assert sorted(gap.ranking_a) == sorted(gap.ranking_b)


def test_gap_report_identity_has_no_flips():
    screened = screened_catalog()
    # measured ranking identical to the screened one
    from types import SimpleNamespace
    rows = score_rows([
        SimpleNamespace(model_name=name, acc_pct=80.0, time_s=1.0,
                        avg_power_mw=1000.0,
                        energy_j=100.0 + 10 * i)   # ascending: keeps order
        for i, (name, _) in enumerate(
            (card.name, s) for card, s in screened.survivors)
    ], DEFAULT_PRESETS)
    measured = rank(rows, "energy")
    gap = gap_report(screened, measured)
    assert gap.kendall_tau == 1.0
    assert gap.leader_flips == ()


def test_gap_report_disjoint_sets_is_an_error():
    measured = rank(rows_from(TX2_IMAGENET), "sam5")
    other = Registry(cards=(ModelCard("Nobody", 1.0, 1.0, 90.0),))
    with pytest.raises(ReportError, match="no model names in common"):
        gap_report(screen(other, ThresholdPolicy()), measured)


def test_gap_report_lists_dropped_names():
    screened = screened_catalog()
    measured = rank(rows_from(TX2_IMAGENET[:5]), "sam5")
    gap = gap_report(screened, measured)
    assert len(gap.ranking_a) == 5
    assert len(gap.dropped) == 8


# --- emit ------------------------------------------------------------------------------

def test_emit_is_deterministic():
    table = rank(rows_from(TX2_CIFAR10), "sam5",
                 metadata={"device": "jetson-tx2", "dataset": "cifar-10"})
    for fmt in ("markdown", "csv", "json", "plotdata"):
        assert emit(table, fmt) == emit(table, fmt)


def test_emit_markdown_has_published_column_order():
    table = rank(rows_from(TX2_CIFAR10), "sam5")
    text = emit(table, "markdown").decode()
    header = next(l for l in text.splitlines() if l.startswith("| Model"))
    assert header == ("| Model | Acc (%) | Time (s) | Power (mW) | "
                      "Energy (J) | SAM5 | SAM1 |")
    assert "| LeViT_Conv_192 | 97.10 | 295.355 | 3389.26 | 1001.04 | 1.44 "
    assert "1.44" in text


def test_emit_empty_table_is_header_only():
    table = RankedTable(title="", sort_key="sam5", rows=(),
                        metadata={k: "unknown" for k in
                                  ("device", "dataset", "rail_selection",
                                   "window_mode")})
    text = emit(table, "csv").decode()
    assert text.splitlines() == [
        "model_name,acc_pct,time_s,avg_power_mw,energy_j,net_score,error"]


def test_emit_screened_set_matches_catalog_layout(table1_csv):
    from e3p.registry import load_registry
    screened = screen(load_registry(table1_csv), ThresholdPolicy())
    text = emit(screened, "markdown").decode()
    lines = text.splitlines()
    assert lines[0] == "| Model | Params (M) | MACs (G) | Acc (%) | NetScore |"
    assert lines[2].startswith("| EfficientViT-B1 | 9.1 | 0.52 | 79.40 | 69.24")
    assert lines[14].startswith("| DeiT-Small | 22.4 | 4.6 | 79.80 | 55.95")


def test_emit_plotdata_structure():
    table = rank(rows_from(TX2_CIFAR10[:2]), "sam5")
    lines = emit(table, "plotdata").decode().splitlines()
    assert lines[0] == "x,y,label,series"
    assert len(lines) == 1 + 2 * 2
    assert lines[1].endswith("energy_vs_acc")
    assert lines[3].endswith("time_vs_acc")


def test_emit_gap_report_formats():
    measured = rank(rows_from(TX2_IMAGENET), "sam5")
    gap = gap_report(screened_catalog(), measured)
    md = emit(gap, "markdown").decode()
    assert "Kendall tau" in md and "EfficientViT-B1" in md
    csv_text = emit(gap, "csv").decode()
    assert "EfficientViT-B1,1,11" in csv_text
    plot = emit(gap, "plotdata").decode().splitlines()
    assert plot[0] == "x,y,label,series"
    assert len(plot) == 1 + 13


def test_emit_unsupported_format_and_type():
    table = rank(rows_from(TX2_CIFAR10[:1]), "sam5")
    with pytest.raises(ReportError):
        emit(table, "xml")
    with pytest.raises(ReportError):
        emit(42, "json")
