"""Threshold filtering, Pareto dominance, and NetScore ranking tests."""

import math
import random

import pytest
from hypothesis import given, strategies as st

from e3p.errors import ConfigError, MetricDomainError, ScreeningError
from e3p.registry import ModelCard, Registry
from e3p.screening import (
    ThresholdPolicy,
    net_score,
    pareto_front,
    screen,
    threshold_filter,
)

from golden import CATALOG, CATALOG_ORDER


def card(name, params, macs, acc, tags=()):
    return ModelCard(name, params, macs, acc, tuple(tags))


def catalog_cards():
    return [card(n, p, m, a) for n, p, m, a, _ in CATALOG]


# Independent O(n^2) dominance oracle, written before the implementation.
# A card is on the front iff no other card is >= on all three criteria
# (accuracy up, params down, MACs down) and strictly better on at least one.
def oracle_front(cards):
    def beats(a, b):
        ge = (a.top1_acc_pct >= b.top1_acc_pct
              and a.params_m <= b.params_m
              and a.macs_g <= b.macs_g)
        strict = (a.top1_acc_pct > b.top1_acc_pct
                  or a.params_m < b.params_m
                  or a.macs_g < b.macs_g)
        return ge and strict

    return {b.name for b in cards
            if not any(beats(a, b) for a in cards if a is not b)}


# --- net_score -------------------------------------------------------------

@pytest.mark.parametrize("acc,params,macs,expected", [
    (79.40, 9.1, 0.52, 69.24),   # published catalog row
    (80.70, 5.4, 1.30, 67.81),
    (79.80, 22.0, 4.60, 56.03),
])
def test_net_score_published_rows(acc, params, macs, expected):
    assert net_score(acc, params, macs) == pytest.approx(expected, abs=0.01)


def test_net_score_unit_denominator():
    # 20 * log10(100^2 / 1) = 20 * 4 = 80 exactly
    assert net_score(100.0, 1.0, 1.0) == pytest.approx(80.0, abs=1e-12)


@pytest.mark.parametrize("acc,params,macs", [
    (0.0, 1.0, 1.0), (-1.0, 1.0, 1.0), (50.0, 0.0, 1.0), (50.0, 1.0, -2.0),
])
def test_net_score_domain_errors(acc, params, macs):
    with pytest.raises(MetricDomainError):
        net_score(acc, params, macs)


finite_pos = st.floats(min_value=1e-3, max_value=1e3,
                       allow_nan=False, allow_infinity=False)


@given(acc=st.floats(min_value=1.0, max_value=99.0), base=finite_pos,
       bump=st.floats(min_value=1e-3, max_value=10.0))
def test_net_score_monotonic(acc, base, bump):
    ref = net_score(acc, base, base)
    assert net_score(acc + bump if acc + bump <= 100 else 100.0, base, base) >= ref
    assert net_score(acc, base + bump, base) < ref
    assert net_score(acc, base, base + bump) < ref


@given(acc=st.floats(min_value=1.0, max_value=100.0), params=finite_pos,
       macs=finite_pos, k=st.floats(min_value=1e-2, max_value=1e4))
def test_net_score_param_scale_law(acc, params, macs, k):
    # Multiplying params by k lowers the score by exactly 10*log10(k) dB.
    lhs = net_score(acc, params * k, macs)
    rhs = net_score(acc, params, macs) - 10 * math.log10(k)
    assert lhs == pytest.approx(rhs, abs=1e-9)


# --- threshold_filter --------------------------------------------------------

def test_all_catalog_cards_pass_default_policy():
    passed, rejected = threshold_filter(catalog_cards(), ThresholdPolicy())
    assert len(passed) == 13 and rejected == []


def test_rejection_reasons_name_the_rule():
    policy = ThresholdPolicy()
    _, rejected = threshold_filter(
        [card("FatNet", 25.0, 4.0, 85.0)], policy)
    assert rejected[0][1] == "params ≥ 23M"

    _, rejected = threshold_filter(
        [card("DimNet", 5.4, 1.3, 78.9)], policy)
    assert rejected[0][1] == "accuracy < 79%"

    _, rejected = threshold_filter(
        [card("Cruncher", 5.0, 6.5, 85.0)], policy)
    assert rejected[0][1] == "macs ≥ 5G"


def test_thresholds_are_strict_for_params_and_macs_inclusive_for_acc():
    policy = ThresholdPolicy()
    boundary = [
        card("AtAcc", 1.0, 1.0, 79.0),      # accuracy >= 79 passes at equal
        card("AtParams", 23.0, 1.0, 85.0),  # params < 23 fails at equal
        card("AtMacs", 1.0, 5.0, 85.0),     # macs < 5.0 fails at equal
    ]
    passed, rejected = threshold_filter(boundary, policy)
    assert [c.name for c in passed] == ["AtAcc"]
    assert {c.name for c, _ in rejected} == {"AtParams", "AtMacs"}


def test_threshold_filter_is_idempotent():
    cards = catalog_cards() + [card("FatNet", 44.0, 2.0, 90.0)]
    policy = ThresholdPolicy()
    once, _ = threshold_filter(cards, policy)
    twice, rejected = threshold_filter(once, policy)
    assert twice == once and rejected == []


def test_policy_validation():
    with pytest.raises(ConfigError):
        ThresholdPolicy(min_acc_pct=101.0)
    with pytest.raises(ConfigError):
        ThresholdPolicy(min_acc_pct=0.0)
    with pytest.raises(ConfigError):
        ThresholdPolicy(max_params_m=math.inf)


# --- pareto_front ------------------------------------------------------------

def test_dominated_card_is_removed_and_names_dominator():
    a = card("A", 10.0, 1.0, 80.0)
    b = card("B", 12.0, 1.5, 79.0)
    front, dominated = pareto_front([a, b])
    assert front == [a]
    assert dominated == [(b, "A")]


def test_identical_cards_both_stay_on_front():
    a = card("A", 10.0, 1.0, 80.0)
    b = card("B", 10.0, 1.0, 80.0)
    front, dominated = pareto_front([a, b])
    assert front == [a, b] and dominated == []


def test_pareto_front_matches_oracle_on_seeded_random_set():
    rng = random.Random(1234)
    cards = [card(f"m{i}", rng.uniform(1, 30), rng.uniform(0.1, 6),
                  rng.uniform(60, 95)) for i in range(20)]
    front, dominated = pareto_front(cards)
    assert {c.name for c in front} == oracle_front(cards)
    # every reported dominator actually dominates its victim
    by_name = {c.name: c for c in cards}
    for victim, dom_name in dominated:
        d = by_name[dom_name]
        assert (d.top1_acc_pct >= victim.top1_acc_pct
                and d.params_m <= victim.params_m
                and d.macs_g <= victim.macs_g)
        assert (d.top1_acc_pct, d.params_m, d.macs_g) != (
            victim.top1_acc_pct, victim.params_m, victim.macs_g)


@given(st.lists(
    st.tuples(st.floats(min_value=0.1, max_value=50),
              st.floats(min_value=0.05, max_value=8),
              st.floats(min_value=1, max_value=100)),
    min_size=1, max_size=50))
def test_pareto_front_matches_oracle(values):
    cards = [card(f"m{i}", p, m, a) for i, (p, m, a) in enumerate(values)]
    front, _ = pareto_front(cards)
    assert {c.name for c in front} == oracle_front(cards)


# --- screen ------------------------------------------------------------------

def make_registry(cards):
    return Registry(cards=tuple(cards), source_path="<test>")


def test_screen_reproduces_published_order():
    result = screen(make_registry(catalog_cards()), ThresholdPolicy())
    assert [c.name for c, _ in result.survivors] == CATALOG_ORDER
    scores = [s for _, s in result.survivors]
    assert scores == sorted(scores, reverse=True)
    for (c, s), (_, _, _, _, published) in zip(result.survivors, CATALOG):
        assert s == pytest.approx(published, abs=0.01)


def test_screen_with_violators_keeps_only_catalog():
    violators = [
        card("BigNet-99", 45.0, 4.0, 85.0),
        card("HeavyMac-7", 10.0, 9.9, 83.0),
        card("LowAcc-3", 5.0, 1.0, 72.5),
    ]
    result = screen(make_registry(catalog_cards() + violators),
                    ThresholdPolicy())
    assert [c.name for c, _ in result.survivors] == CATALOG_ORDER
    assert {c.name for c, _ in result.rejected} == {
        "BigNet-99", "HeavyMac-7", "LowAcc-3"}


def test_screen_single_card():
    only = card("Solo", 5.0, 1.0, 85.0)
    result = screen(make_registry([only]), ThresholdPolicy())
    assert [c.name for c, _ in result.survivors] == ["Solo"]


def test_screen_empty_survivors_is_an_error():
    with pytest.raises(ScreeningError, match="no candidates"):
        screen(make_registry([card("DimNet", 5.0, 1.0, 10.0)]),
               ThresholdPolicy())


def test_screen_with_pareto_drops_dominated_survivors():
    cards = [
        card("Good", 5.0, 1.0, 85.0),
        card("Worse", 6.0, 1.5, 84.0),   # dominated by Good
        card("Tradeoff", 4.0, 2.0, 84.0),  # fewer params, more MACs: stays
    ]
    result = screen(make_registry(cards), ThresholdPolicy(), use_pareto=True)
    names = [c.name for c, _ in result.survivors]
    assert "Worse" not in names
    assert set(names) == {"Good", "Tradeoff"}
    reasons = dict((c.name, r) for c, r in result.rejected)
    assert reasons["Worse"] == "dominated by Good"


def test_screen_tie_break_params_then_name():
    # identical NetScore by construction: same acc, same params*macs product
    a = card("BBB", 4.0, 1.0, 80.0)
    b = card("AAA", 4.0, 1.0, 80.0)
    c = card("CCC", 1.0, 4.0, 80.0)  # same sqrt product, fewer params
    result = screen(make_registry([a, b, c]), ThresholdPolicy())
    assert [x.name for x, _ in result.survivors] == ["CCC", "AAA", "BBB"]


def test_screen_is_deterministic_and_order_insensitive():
    cards = catalog_cards()
    res_a = screen(make_registry(cards), ThresholdPolicy())
    res_b = screen(make_registry(list(reversed(cards))), ThresholdPolicy())
    assert [c.name for c, _ in res_a.survivors] == \
        [c.name for c, _ in res_b.survivors]
