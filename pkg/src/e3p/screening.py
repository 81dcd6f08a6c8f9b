"""Device-agnostic screening: thresholds, Pareto dominance, NetScore ranking.

All operations are pure functions over immutable inputs and are safe to call
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, MetricDomainError, ScreeningError
from .registry import ModelCard, Registry

DEFAULT_MIN_ACC_PCT = 79.0
DEFAULT_MAX_PARAMS_M = 23.0
DEFAULT_MAX_MACS_G = 5.0


@dataclass(frozen=True)
class ThresholdPolicy:
    """Hard screening thresholds.

    Accuracy is inclusive (>= min), params and MACs are strict (< max).
    """

    min_acc_pct: float = DEFAULT_MIN_ACC_PCT
    max_params_m: float = DEFAULT_MAX_PARAMS_M
    max_macs_g: float = DEFAULT_MAX_MACS_G

    def __post_init__(self):
        for fname in ("min_acc_pct", "max_params_m", "max_macs_g"):
            value = getattr(self, fname)
            if not isinstance(value, (int, float)) or isinstance(value, bool) \
                    or not math.isfinite(value):
                raise ConfigError(f"threshold {fname!r} must be finite, "
                                  f"got {value!r}")
        if not 0 < self.min_acc_pct <= 100:
            raise ConfigError(
                f"min_acc_pct must be in (0, 100], got {self.min_acc_pct!r}")


@dataclass(frozen=True)
class ScreenedSet:
    """Outcome of the screening stage.

    ``survivors`` is sorted by NetScore descending (ties: fewer params, then
    name); every ``rejected`` entry carries the rule or dominator that
    eliminated the card.
    """

    survivors: tuple[tuple[ModelCard, float], ...]
    rejected: tuple[tuple[ModelCard, str], ...]
    policy: ThresholdPolicy = ThresholdPolicy()
    used_pareto: bool = False


def net_score(acc_pct: float, params_m: float, macs_g: float) -> float:
    """Composite screening score in dB: 20*log10(acc^2 / (sqrt(P)*sqrt(M))).

    Units are fixed: accuracy in percent, parameters in millions, MACs in
    billions. Higher is better; accuracy is rewarded, size and compute are
    penalized.
    """
    if acc_pct <= 0 or params_m <= 0 or macs_g <= 0:
        raise MetricDomainError(
            "net_score requires positive accuracy, params, and MACs; got "
            f"acc={acc_pct!r}, params={params_m!r}, macs={macs_g!r}")
    return 20.0 * math.log10(
        (acc_pct * acc_pct) / (math.sqrt(params_m) * math.sqrt(macs_g)))


def _first_violation(card: ModelCard, policy: ThresholdPolicy) -> str | None:
    if card.top1_acc_pct < policy.min_acc_pct:
        return f"accuracy < {policy.min_acc_pct:g}%"
    if card.params_m >= policy.max_params_m:
        return f"params ≥ {policy.max_params_m:g}M"
    if card.macs_g >= policy.max_macs_g:
        return f"macs ≥ {policy.max_macs_g:g}G"
    return None


def threshold_filter(
    cards: list[ModelCard], policy: ThresholdPolicy
) -> tuple[list[ModelCard], list[tuple[ModelCard, str]]]:
    """Split cards into those satisfying all thresholds and the rejects.

    Each reject carries the first violated rule, checked in the order
    accuracy, params, MACs.
    """
    passed: list[ModelCard] = []
    rejected: list[tuple[ModelCard, str]] = []
    for card in cards:
        reason = _first_violation(card, policy)
        if reason is None:
            passed.append(card)
        else:
            rejected.append((card, reason))
    return passed, rejected


def _dominates(a: ModelCard, b: ModelCard) -> bool:
    """Weak dominance with at least one strict inequality."""
    if (a.top1_acc_pct < b.top1_acc_pct or a.params_m > b.params_m
            or a.macs_g > b.macs_g):
        return False
    return (a.top1_acc_pct > b.top1_acc_pct or a.params_m < b.params_m
            or a.macs_g < b.macs_g)


def pareto_front(
    cards: list[ModelCard],
) -> tuple[list[ModelCard], list[tuple[ModelCard, str]]]:
    """Split cards into the dominance front and the dominated rest.

    A card dominates another if it is at least as good on all three criteria
    (accuracy up, params down, MACs down) and strictly better on one.
    Identical cards do not eliminate each other. Dominated entries name one
    dominator (the first in input order). Input order is preserved.
    """
    front: list[ModelCard] = []
    dominated: list[tuple[ModelCard, str]] = []
    for candidate in cards:
        dominator = next(
            (other for other in cards
             if other is not candidate and _dominates(other, candidate)),
            None)
        if dominator is None:
            front.append(candidate)
        else:
            dominated.append((candidate, dominator.name))
    return front, dominated


def screen(
    registry: Registry,
    policy: ThresholdPolicy = ThresholdPolicy(),
    use_pareto: bool = False,
) -> ScreenedSet:
    """Run the full device-agnostic stage over a registry.

    Applies threshold filtering, optionally Pareto filtering on the
    survivors, then ranks by NetScore descending. Ties break by ascending
    params, then name, so repeated runs and permuted inputs produce
    identical output.

    Raises:
        ScreeningError: if no card survives.
    """
    survivors, rejected = threshold_filter(list(registry.cards), policy)
    if use_pareto:
        survivors, dominated = pareto_front(survivors)
        rejected = rejected + [
            (card, f"dominated by {dom}") for card, dom in dominated]
    if not survivors:
        raise ScreeningError(
            f"no candidates: all {len(registry.cards)} cards were rejected")
    scored = [(card, net_score(card.top1_acc_pct, card.params_m, card.macs_g))
              for card in survivors]
    scored.sort(key=lambda item: (-item[1], item[0].params_m, item[0].name))
    return ScreenedSet(
        survivors=tuple(scored),
        rejected=tuple(rejected),
        policy=policy,
        used_pareto=use_pareto,
    )
