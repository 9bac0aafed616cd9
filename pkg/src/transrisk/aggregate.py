"""Fund, subset and sector roll-ups of position results."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import skew

from .model import AssetClass, Fund, PositionResult, normalize_nace4

NACE_CLASSES = (AssetClass.EQUITY, AssetClass.CORPORATE_BOND)


class ZeroAuM(ValueError):
    pass


class WeightSumError(ValueError):
    pass


class EmptyTable(ValueError):
    pass


# ---------------------------------------------------------------------------
# Greenness metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TecTac:
    tec: float
    tac: float
    eligible_share: float
    adj_tec: float | None
    adj_tac: float | None


def _lookup_coefficients(nace: str | None, table: Mapping[str, tuple[float, float]]) -> tuple[float, float]:
    key = normalize_nace4(nace)
    while key:
        if key in table:
            return table[key]
        # 35.11 -> 35.1 -> 35
        key = key[:-1].rstrip(".") if "." in key else None
    return 0.0, 0.0


def tec_tac(
    results: Iterable[PositionResult],
    table: Mapping[str, tuple[float, float]],
    aum: float | None = None,
) -> TecTac:
    """Transition-exposure and taxonomy-alignment coefficients of a portfolio.

    Only equities and corporate bonds with a NACE code are eligible; the rest
    count as zero, so weights are taken over the whole portfolio.
    """
    if not table:
        raise EmptyTable("TEC/TAC coefficient table is empty")
    total = 0.0
    eligible = 0.0
    tec = 0.0
    tac = 0.0
    for r in results:
        total += r.market_value
        if r.asset_class not in NACE_CLASSES or normalize_nace4(r.nace) is None:
            continue
        eligible += r.market_value
        t_ec, t_ac = _lookup_coefficients(r.nace, table)
        tec += r.market_value * t_ec
        tac += r.market_value * t_ac
    total = aum if aum is not None else total
    if total <= 0:
        return TecTac(0.0, 0.0, 0.0, None, None)
    tec /= total
    tac /= total
    share = eligible / total
    if share <= 0:
        return TecTac(tec, tac, 0.0, None, None)
    return TecTac(tec, tac, share, tec / share, tac / share)


def adjusted(coefficient: float, eligible_share: float) -> float:
    """Coefficient expressed over the eligible part of the portfolio."""
    return coefficient / eligible_share


def cprs_share(results: Iterable[PositionResult], cprs_map: Mapping[str, str], aum: float | None = None) -> float:
    """Market-value share held in climate-policy-relevant sectors."""
    total = 0.0
    flagged = 0.0
    for r in results:
        total += r.market_value
        if r.asset_class in NACE_CLASSES and r.segment in cprs_map:
            flagged += r.market_value
    total = aum if aum is not None else total
    return flagged / total if total > 0 else 0.0


# ---------------------------------------------------------------------------
# Funds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FundResult:
    fund_id: str
    aum: float
    loss_fraction: float
    loss_eur: float
    weighted_ci: float | None
    ci_coverage: float
    class_weights: Mapping[AssetClass, float]
    labels: frozenset[str] = frozenset()
    cprs_share: float | None = None
    greenness: TecTac | None = None
    flags: tuple[str, ...] = ()


def aggregate_fund(
    results: Sequence[PositionResult],
    fund: Fund,
    cprs_map: Mapping[str, str] | None = None,
    tec_tac_table: Mapping[str, tuple[float, float]] | None = None,
) -> FundResult:
    total = math.fsum(r.market_value for r in results)
    aum = fund.aum if fund.aum is not None else total
    flags = []
    loss_eur = math.fsum(r.loss_fraction * r.market_value for r in results)
    if aum > 0:
        loss = loss_eur / aum
    else:
        loss = 0.0
        flags.append("zero_aum")

    covered = [(r.market_value, r.carbon_intensity) for r in results if r.carbon_intensity is not None]
    covered_mv = math.fsum(mv for mv, _ in covered)
    weighted_ci = math.fsum(mv * ci for mv, ci in covered) / covered_mv if covered_mv > 0 else None

    weights = {cls: 0.0 for cls in AssetClass}
    for r in results:
        weights[r.asset_class] += r.market_value
    if total > 0:
        weights = {cls: v / total for cls, v in weights.items()}

    return FundResult(
        fund_id=fund.fund_id,
        aum=aum,
        loss_fraction=loss,
        loss_eur=loss_eur,
        weighted_ci=weighted_ci,
        ci_coverage=covered_mv / total if total > 0 else 0.0,
        class_weights=weights,
        labels=fund.labels,
        cprs_share=cprs_share(results, cprs_map, aum) if cprs_map is not None else None,
        greenness=tec_tac(results, tec_tac_table, aum) if tec_tac_table else None,
        flags=tuple(flags),
    )


def group_by_fund(results: Iterable[PositionResult]) -> dict[str, list[PositionResult]]:
    out: dict[str, list[PositionResult]] = {}
    for r in results:
        out.setdefault(r.fund_id, []).append(r)
    return out


def aggregate_funds(
    results: Iterable[PositionResult],
    funds: Mapping[str, Fund],
    cprs_map: Mapping[str, str] | None = None,
    tec_tac_table: Mapping[str, tuple[float, float]] | None = None,
) -> list[FundResult]:
    grouped = group_by_fund(results)
    return [aggregate_fund(grouped.get(fid, []), funds[fid], cprs_map, tec_tac_table) for fid in sorted(funds)]


# ---------------------------------------------------------------------------
# Distribution of fund losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionStats:
    count: int
    mean: float
    median: float
    skewness: float
    p1: float
    p5: float
    p10: float
    p50: float
    worst_1: float
    worst_5: float
    best_1: float


def tail_mean(losses: Sequence[float], pct: float, worst: bool = True) -> float:
    """Mean over the ``ceil(pct% * n)`` worst (lowest) or best losses."""
    x = sorted(losses)
    if not x:
        raise ValueError("empty sample")
    k = max(1, math.ceil(pct / 100.0 * len(x) - 1e-9))
    chosen = x[:k] if worst else x[-k:]
    return math.fsum(chosen) / k


def sample_skewness(losses: Sequence[float]) -> float:
    x = np.asarray(losses, dtype=float)
    if x.size < 3:
        return 0.0
    m2 = float(np.mean((x - x.mean()) ** 2))
    # spread too small to resolve a third moment: treat as symmetric
    if not m2 > 1e-300:
        return 0.0
    return float(skew(x, bias=False))


def loss_distribution(losses: Sequence[float]) -> DistributionStats | None:
    if len(losses) == 0:
        return None
    x = np.asarray(losses, dtype=float)
    p1, p5, p10, p50 = (float(v) for v in np.percentile(x, [1, 5, 10, 50]))
    return DistributionStats(
        count=int(x.size),
        mean=math.fsum(losses) / x.size,
        median=float(np.median(x)),
        skewness=sample_skewness(x),
        p1=p1,
        p5=p5,
        p10=p10,
        p50=p50,
        worst_1=tail_mean(losses, 1),
        worst_5=tail_mean(losses, 5),
        best_1=tail_mean(losses, 1, worst=False),
    )


def sector_distribution(fund_results: Sequence[FundResult]) -> DistributionStats | None:
    """Equal-weighted distribution of fund losses; None for an empty set."""
    return loss_distribution([f.loss_fraction for f in fund_results])


def histogram(losses: Sequence[float], lo: float, hi: float, width: float) -> list[tuple[float, float, int]]:
    """Counts per bin of ``width`` over ``[lo, hi]``; values outside are clipped to the end bins."""
    nbins = int(round((hi - lo) / width))
    edges = np.linspace(lo, hi, nbins + 1)
    counts, _ = np.histogram(np.clip(np.asarray(losses, dtype=float), lo, hi), bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(nbins)]


# ---------------------------------------------------------------------------
# Worst / best instrument characterisation
# ---------------------------------------------------------------------------

CLASS_METRICS = {
    AssetClass.EQUITY: ("volatility",),
    AssetClass.CORPORATE_BOND: ("cqs", "duration"),
    AssetClass.SOVEREIGN_BOND: ("cqs", "duration"),
    AssetClass.FUND_VEHICLE: (),
}


@dataclass(frozen=True)
class CharacterizationRow:
    label: str
    count: int
    loss: float
    carbon_intensity: float | None
    cqs: float | None
    duration: float | None
    volatility: float | None
    modal: tuple[str, ...] = ()


def _mean_of(values: Iterable[float | None]) -> float | None:
    xs = [v for v in values if v is not None]
    return math.fsum(xs) / len(xs) if xs else None


def unique_instruments(results: Iterable[PositionResult]) -> list[PositionResult]:
    """First result per (isin, asset class), ordered by isin."""
    seen: dict[tuple[str, AssetClass], PositionResult] = {}
    for r in results:
        seen.setdefault((r.isin, r.asset_class), r)
    return [seen[k] for k in sorted(seen, key=lambda k: (k[0], k[1].value))]


def _mode_key(r: PositionResult) -> str | None:
    if r.asset_class is AssetClass.SOVEREIGN_BOND:
        return r.country
    if r.asset_class is AssetClass.FUND_VEHICLE:
        return r.style.value if r.style else None
    return r.segment


def characterize_tail(
    results: Sequence[PositionResult],
    percentile: float,
    direction: str = "worst",
    label: str | None = None,
    n_modal: int = 3,
) -> CharacterizationRow:
    """Equal-weighted profile of the worst or best ``percentile`` % of a subset.

    Ties in loss are broken by ISIN so the selection is deterministic.
    """
    if direction not in ("worst", "best"):
        raise ValueError("direction must be 'worst' or 'best'")
    if not results:
        raise ValueError("empty subset")
    ranked = sorted(results, key=lambda r: (r.loss_fraction, r.isin))
    if direction == "best":
        ranked = sorted(results, key=lambda r: (-r.loss_fraction, r.isin))
    k = max(1, math.ceil(percentile / 100.0 * len(ranked) - 1e-9))
    tail = ranked[:k]

    classes = {r.asset_class for r in tail}
    shown = set()
    for cls in classes:
        shown.update(CLASS_METRICS.get(cls, ()))

    modes = Counter(m for m in map(_mode_key, tail) if m)
    modal = tuple(name for name, _ in sorted(modes.items(), key=lambda kv: (-kv[1], kv[0]))[:n_modal])
    return CharacterizationRow(
        label=label or f"{direction} {percentile:g}%",
        count=k,
        loss=math.fsum(r.loss_fraction for r in tail) / k,
        carbon_intensity=_mean_of(r.carbon_intensity for r in tail),
        cqs=_mean_of(r.cqs for r in tail) if "cqs" in shown else None,
        duration=_mean_of(r.duration for r in tail) if "duration" in shown else None,
        volatility=_mean_of(r.volatility for r in tail) if "volatility" in shown else None,
        modal=modal,
    )


CLASS_LABELS = {
    AssetClass.EQUITY: "Equities",
    AssetClass.CORPORATE_BOND: "Corporate bonds",
    AssetClass.SOVEREIGN_BOND: "Sovereign debt",
    AssetClass.FUND_VEHICLE: "Other funds",
}


def characterization_table(results: Sequence[PositionResult], percentile: float = 1.0) -> list[CharacterizationRow]:
    """Worst, best and all-instrument rows for each repriced class."""
    instruments = unique_instruments(results)
    rows = []
    by_class = {cls: [r for r in instruments if r.asset_class is cls] for cls in CLASS_LABELS}
    for direction in ("worst", "best"):
        for cls, name in CLASS_LABELS.items():
            if by_class[cls]:
                rows.append(characterize_tail(by_class[cls], percentile, direction,
                                              f"{name} ({direction} {percentile:g}%)"))
    for cls, name in CLASS_LABELS.items():
        if by_class[cls]:
            rows.append(characterize_tail(by_class[cls], 100.0, "worst", f"{name} (all)", n_modal=0))
    return rows


# ---------------------------------------------------------------------------
# Portfolio-level class breakdown and the allocation counterfactual
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassBreakdown:
    shares: Mapping[AssetClass, float]
    losses: Mapping[AssetClass, float]  # market-value-weighted within each class
    carbon_intensity: Mapping[AssetClass, float | None]
    total_loss: float
    total_ci: float | None
    aum: float


def class_breakdown(results: Iterable[PositionResult]) -> ClassBreakdown:
    mv = {cls: 0.0 for cls in AssetClass}
    loss = {cls: 0.0 for cls in AssetClass}
    ci_mv = {cls: 0.0 for cls in AssetClass}
    ci_sum = {cls: 0.0 for cls in AssetClass}
    for r in results:
        mv[r.asset_class] += r.market_value
        loss[r.asset_class] += r.market_value * r.loss_fraction
        if r.carbon_intensity is not None:
            ci_mv[r.asset_class] += r.market_value
            ci_sum[r.asset_class] += r.market_value * r.carbon_intensity
    total = sum(mv.values())
    total_ci_mv = sum(ci_mv.values())
    return ClassBreakdown(
        shares={c: (mv[c] / total if total > 0 else 0.0) for c in AssetClass},
        losses={c: (loss[c] / mv[c] if mv[c] > 0 else 0.0) for c in AssetClass},
        carbon_intensity={c: (ci_sum[c] / ci_mv[c] if ci_mv[c] > 0 else None) for c in AssetClass},
        total_loss=sum(loss.values()) / total if total > 0 else 0.0,
        total_ci=sum(ci_sum.values()) / total_ci_mv if total_ci_mv > 0 else None,
        aum=total,
    )


def counterfactual_loss(
    class_losses: Mapping[AssetClass, float],
    target_weights: Mapping[AssetClass, float],
    tol: float = 1e-9,
) -> float:
    """Loss of a portfolio holding ``target_weights`` of each class at the given class losses."""
    total = math.fsum(target_weights.values())
    if abs(total - 1.0) > tol:
        raise WeightSumError(f"weights sum to {total}, expected 1")
    return math.fsum(
        w * class_losses.get(cls, 0.0)
        for cls, w in target_weights.items()
        if cls not in (AssetClass.CASH, AssetClass.UNCLASSIFIED)
    )


@dataclass(frozen=True)
class SubsetComparison:
    label: str
    n_funds: int
    subset: ClassBreakdown | None
    universe: ClassBreakdown
    counterfactual: float | None
    subset_worst_1: float | None
    subset_worst_5: float | None
    universe_worst_1: float | None
    universe_worst_5: float | None
    subset_worst_1_ci: float | None = None
    universe_worst_1_ci: float | None = None


def _worst_funds_ci(funds: Sequence[FundResult], results_by_fund: Mapping[str, list[PositionResult]],
                    pct: float) -> float | None:
    if not funds:
        return None
    ranked = sorted(funds, key=lambda f: (f.loss_fraction, f.fund_id))
    k = max(1, math.ceil(pct / 100.0 * len(ranked) - 1e-9))
    rows = [r for f in ranked[:k] for r in results_by_fund.get(f.fund_id, [])]
    return class_breakdown(rows).total_ci


def compare_subset(
    label: str,
    fund_results: Sequence[FundResult],
    results: Sequence[PositionResult],
) -> SubsetComparison:
    """Labelled funds against the whole universe, including the same-allocation counterfactual."""
    by_fund = group_by_fund(results)
    members = [f for f in fund_results if label in f.labels]
    universe = class_breakdown(results)
    subset_rows = [r for f in members for r in by_fund.get(f.fund_id, [])]
    subset = class_breakdown(subset_rows) if members else None
    counterfactual = None
    if subset is not None and subset.aum > 0:
        counterfactual = counterfactual_loss(universe.losses, subset.shares)
    member_losses = [f.loss_fraction for f in members]
    all_losses = [f.loss_fraction for f in fund_results]
    return SubsetComparison(
        label=label,
        n_funds=len(members),
        subset=subset,
        universe=universe,
        counterfactual=counterfactual,
        subset_worst_1=tail_mean(member_losses, 1) if members else None,
        subset_worst_5=tail_mean(member_losses, 5) if members else None,
        universe_worst_1=tail_mean(all_losses, 1) if all_losses else None,
        universe_worst_5=tail_mean(all_losses, 5) if all_losses else None,
        subset_worst_1_ci=_worst_funds_ci(members, by_fund, 1),
        universe_worst_1_ci=_worst_funds_ci(list(fund_results), by_fund, 1),
    )


# ---------------------------------------------------------------------------
# Sector totals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectorTotals:
    aum: float
    loss_eur: float
    loss_fraction: float
    weighted_ci: float | None
    cprs_share: float | None
    greenness: TecTac | None
    extrapolated_loss_eur: float | None = None
    fund_count: int = 0
    breakdown: ClassBreakdown | None = field(default=None, repr=False)


def sector_totals(
    fund_results: Sequence[FundResult],
    results: Sequence[PositionResult],
    cprs_map: Mapping[str, str] | None = None,
    tec_tac_table: Mapping[str, tuple[float, float]] | None = None,
    scale_factor: float | None = None,
) -> SectorTotals:
    breakdown = class_breakdown(results)
    aum = math.fsum(f.aum for f in fund_results)
    loss_eur = math.fsum(f.loss_eur for f in fund_results)
    return SectorTotals(
        aum=aum,
        loss_eur=loss_eur,
        loss_fraction=loss_eur / aum if aum > 0 else 0.0,
        weighted_ci=breakdown.total_ci,
        cprs_share=cprs_share(results, cprs_map) if cprs_map is not None else None,
        greenness=tec_tac(results, tec_tac_table) if tec_tac_table else None,
        extrapolated_loss_eur=loss_eur * scale_factor if scale_factor is not None else None,
        fund_count=len(fund_results),
        breakdown=breakdown,
    )
