"""Scenario repricing of individual positions.

Sign convention: ``loss_fraction`` is the mark-to-market change as a fraction
of market value, so losses are negative and gains positive.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .calib import InstrumentMetrics, SegmentAverages, quantile_of, segment_averages
from .ingest import (
    CISource,
    DomainError,
    resolve_carbon_intensity,
    resolve_country,
    resolve_nace,
)
from .model import (
    FUND,
    N_TENORS,
    OTHER,
    SOV,
    AssetClass,
    Counterparty,
    Instrument,
    InvestmentStyle,
    Multipliers,
    Position,
    PositionResult,
    Scenario,
    SectorCalibration,
    Universe,
    resolve_segment,
)

BP = 1e-4
CONVEXITY_CAP = 40.0


class UnknownCountry(ValueError):
    pass


@dataclass(frozen=True)
class BondSensitivities:
    duration: float
    convexity: float


def bond_sensitivities(T: float, c: float) -> BondSensitivities:
    """Approximate duration and convexity from maturity and coupon.

    Duration is ``T / (1+c)**(T/2)``; convexity ``T(T+1)/(1+c)**2`` capped at
    forty times the duration.
    """
    if c <= -1:
        raise DomainError(f"coupon must be > -1, got {c}")
    if T < 0:
        raise DomainError(f"maturity must be >= 0, got {T}")
    duration = T / (1.0 + c) ** (T / 2.0)
    convexity = min(T * (T + 1.0) / (1.0 + c) ** 2, CONVEXITY_CAP * duration)
    return BondSensitivities(duration, convexity)


def _convexity_from_duration(duration: float) -> float:
    # duration stands in for maturity at zero coupon
    return min(duration * (duration + 1.0), CONVEXITY_CAP * duration)


def interpolate_tenor(curve: Sequence[float], T: float) -> float:
    """Shock at maturity ``T`` on a 1y..10y curve: linear inside, flat outside."""
    if len(curve) != N_TENORS:
        raise ValueError(f"curve needs {N_TENORS} points")
    if T <= 1.0:
        return float(curve[0])
    if T >= N_TENORS:
        return float(curve[-1])
    k = int(math.floor(T))
    w = T - k
    return float(curve[k - 1] + w * (curve[k] - curve[k - 1]))


def taylor_change(dy: float, duration: float, convexity: float, strict: bool = False) -> float:
    """Relative price change for a yield/spread move ``dy`` (decimal).

    Standard second-order expansion: ``-D*dy + 0.5*C*dy**2``. ``strict=True``
    lets the convexity term add to the loss instead, as the source formulas
    are printed.

    In standard mode a rising yield past the turning point ``D/C`` would bend
    the quadratic back towards a gain, which no real bond does, so the change
    is held at its minimum ``-D**2/(2C)`` there.
    """
    if strict:
        return -(dy * duration + 0.5 * dy * dy * convexity)
    if past_turning_point(dy, duration, convexity):
        return -0.5 * duration * duration / convexity
    return -dy * duration + 0.5 * dy * dy * convexity


def past_turning_point(dy: float, duration: float, convexity: float) -> bool:
    return dy > 0 and convexity > 0 and dy * convexity > duration


def ci_multiplier(ci: float | None, cal: SectorCalibration, empirical: bool = False) -> float:
    """Twice the quantile of ``ci`` in ``cal``; 1 when ``ci`` is missing, 0 when nonpositive."""
    if ci is None:
        return 1.0
    if ci <= 0:
        return 0.0
    return 2.0 * quantile_of(ci, cal, empirical=empirical)


# ---------------------------------------------------------------------------
# Resolved exposure data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exposure:
    """Climate data of an instrument's obligor after parent-chain backfill."""

    ci: float | None
    ci_source: CISource
    segment: str
    country: str | None
    nace: str | None = None

    @classmethod
    def resolve(cls, cp: Counterparty | None, universe: Mapping[str, Counterparty]) -> "Exposure":
        if cp is None:
            return cls(None, CISource.MISSING, OTHER, None)
        ci, source = resolve_carbon_intensity(cp, universe)
        nace = resolve_nace(cp, universe)
        segment = resolve_segment(nace) if nace else OTHER
        if segment in (SOV, FUND):
            segment = OTHER
        return cls(ci, source, segment, resolve_country(cp, universe), nace)

    def ci_flags(self) -> tuple[str, ...]:
        if self.ci_source is CISource.PARENT:
            return ("ci_from_parent",)
        if self.ci_source is CISource.ULTIMATE_PARENT:
            return ("ci_from_ultimate_parent",)
        if self.ci_source is CISource.MISSING:
            return ("ci_missing",)
        if self.ci is not None and self.ci <= 0:
            return ("ci_nonpositive",)
        return ()


def _finish(value: float, floor: float | None = -1.0) -> float:
    if floor is not None and value < floor:
        value = floor
    return value + 0.0  # drop negative zero


def _base_flags(instrument: Instrument | None) -> tuple[str, ...]:
    if instrument is not None and instrument.cqs_source and instrument.cqs_source.startswith("worst-of"):
        return ("cqs_worst_of",)
    return ()


def _bond_risk(instrument: Instrument, fallback_duration: float) -> tuple[float, float, tuple[str, ...]]:
    flags: list[str] = []
    if instrument.duration is not None:
        duration = instrument.duration
        if instrument.convexity is not None:
            convexity = instrument.convexity
        elif instrument.maturity_years is not None:
            convexity = bond_sensitivities(instrument.maturity_years, instrument.coupon or 0.0).convexity
        else:
            convexity = _convexity_from_duration(duration)
        return duration, min(convexity, CONVEXITY_CAP * duration), ()
    if instrument.maturity_years is not None:
        coupon = instrument.coupon
        if coupon is None:
            flags.append("coupon_missing")
            coupon = 0.0
        s = bond_sensitivities(instrument.maturity_years, coupon)
        return s.duration, s.convexity, tuple(flags)
    return fallback_duration, _convexity_from_duration(fallback_duration), ("duration_backfilled",)


# ---------------------------------------------------------------------------
# Per asset class
# ---------------------------------------------------------------------------


def reprice_equity(
    position: Position,
    instrument: Instrument,
    exposure: Exposure,
    cal: SectorCalibration,
    scenario: Scenario,
    sector_volatility: float,
    empirical: bool = False,
) -> PositionResult:
    ci_m = ci_multiplier(exposure.ci, cal, empirical)
    flags = list(exposure.ci_flags()) + list(_base_flags(instrument))
    if instrument.volatility is None:
        vol_m = 1.0
        flags.append("volatility_missing")
    else:
        vol_m = instrument.volatility / sector_volatility
    loss = _finish(ci_m * vol_m * scenario.equity_for(exposure.segment))
    return PositionResult(
        fund_id=position.fund_id,
        isin=position.isin,
        asset_class=position.asset_class,
        market_value=position.market_value,
        loss_fraction=loss,
        multipliers=Multipliers(ci_m=ci_m, vol_m=vol_m, ci_backfilled=exposure.ci is None,
                                vol_backfilled=instrument.volatility is None),
        segment=exposure.segment,
        nace=exposure.nace,
        carbon_intensity=exposure.ci,
        volatility=instrument.volatility,
        flags=tuple(flags),
    )


def reprice_corporate_bond(
    position: Position,
    instrument: Instrument,
    exposure: Exposure,
    cal: SectorCalibration,
    scenario: Scenario,
    sector_cqs: float,
    sector_duration: float,
    strict: bool = False,
    empirical: bool = False,
) -> PositionResult:
    ci_m = ci_multiplier(exposure.ci, cal, empirical)
    flags = list(exposure.ci_flags()) + list(_base_flags(instrument))
    if instrument.cqs is None:
        cqs_m = 1.0
        flags.append("cqs_missing")
    else:
        cqs_m = instrument.cqs / sector_cqs
    duration, convexity, bond_flags = _bond_risk(instrument, sector_duration)
    flags.extend(bond_flags)
    spread_move = ci_m * cqs_m * scenario.spread_for(exposure.segment) * BP
    loss = taylor_change(spread_move, duration, convexity, strict)
    if not strict and past_turning_point(spread_move, duration, convexity):
        flags.append("convexity_turning_point")
    if spread_move > 0 and loss > 0:
        loss = 0.0
    return PositionResult(
        fund_id=position.fund_id,
        isin=position.isin,
        asset_class=position.asset_class,
        market_value=position.market_value,
        loss_fraction=_finish(loss),
        multipliers=Multipliers(ci_m=ci_m, cqs_m=cqs_m, ci_backfilled=exposure.ci is None,
                                cqs_backfilled=instrument.cqs is None),
        segment=exposure.segment,
        nace=exposure.nace,
        carbon_intensity=exposure.ci,
        cqs=instrument.cqs,
        duration=duration,
        flags=tuple(flags),
    )


def reprice_sovereign(
    position: Position,
    instrument: Instrument,
    exposure: Exposure,
    scenario: Scenario,
    sovereign_cal: SectorCalibration,
    sovereign_cqs: float,
    sovereign_duration: float,
    strict: bool = False,
    empirical: bool = False,
) -> PositionResult:
    """Listed countries take their own curve; others scale the average curve."""
    country = instrument.country or exposure.country
    if country is None:
        raise UnknownCountry(f"no country for sovereign instrument {instrument.isin}")
    flags = list(_base_flags(instrument))
    duration, convexity, bond_flags = _bond_risk(instrument, sovereign_duration)
    flags.extend(bond_flags)
    tenor = instrument.maturity_years
    if tenor is None:
        tenor = duration
        flags.append("tenor_from_duration")

    curve = scenario.sovereign_curves.get(country)
    if curve is not None:
        multipliers = Multipliers()
        dy_bp = interpolate_tenor(curve, tenor)
    else:
        flags.append("country_unlisted")
        flags.extend(exposure.ci_flags())
        ci_m = ci_multiplier(exposure.ci, sovereign_cal, empirical)
        if instrument.cqs is None:
            cqs_m = 1.0
            flags.append("cqs_missing")
        else:
            cqs_m = instrument.cqs / sovereign_cqs
        multipliers = Multipliers(ci_m=ci_m, cqs_m=cqs_m, ci_backfilled=exposure.ci is None,
                                  cqs_backfilled=instrument.cqs is None)
        average = scenario.average_curve()
        if average is None:
            flags.append("no_sovereign_curves")
            dy_bp = 0.0
        else:
            dy_bp = ci_m * cqs_m * interpolate_tenor(average, tenor)
    loss = taylor_change(dy_bp * BP, duration, convexity, strict)
    if not strict and past_turning_point(dy_bp * BP, duration, convexity):
        flags.append("convexity_turning_point")
    return PositionResult(
        fund_id=position.fund_id,
        isin=position.isin,
        asset_class=position.asset_class,
        market_value=position.market_value,
        loss_fraction=_finish(loss),
        multipliers=multipliers,
        segment=SOV,
        country=country,
        carbon_intensity=exposure.ci,
        cqs=instrument.cqs,
        duration=duration,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class ClassAverages:
    """Average scenario change of equities, corporate and sovereign bonds."""

    equity: float
    corporate: float
    sovereign: float
    counts: tuple[int, int, int] = (0, 0, 0)

    def as_dict(self) -> dict[str, float]:
        return {"equity": self.equity, "corporate": self.corporate, "sovereign": self.sovereign}


def reprice_fund_vehicle(
    position: Position,
    instrument: Instrument,
    exposure: Exposure,
    fund_cal: SectorCalibration,
    averages: ClassAverages,
    factor_two: bool = True,
    empirical: bool = False,
) -> PositionResult:
    flags = list(exposure.ci_flags())
    style = instrument.fund_style
    if style is None:
        style = InvestmentStyle.OTHERS
        flags.append("style_missing")
    w = style.weights
    if exposure.ci is None:
        ci_m = 1.0
    else:
        ci_m = ci_multiplier(exposure.ci, fund_cal, empirical)
        if not factor_two:
            ci_m *= 0.5
    mixed = w.equity * averages.equity + w.corporate * averages.corporate + w.sovereign * averages.sovereign
    return PositionResult(
        fund_id=position.fund_id,
        isin=position.isin,
        asset_class=position.asset_class,
        market_value=position.market_value,
        loss_fraction=_finish(ci_m * mixed),
        multipliers=Multipliers(ci_m=ci_m, ci_backfilled=exposure.ci is None),
        segment=FUND,
        carbon_intensity=exposure.ci,
        style=style,
        flags=tuple(flags),
    )


def reprice_cash(position: Position) -> PositionResult:
    flags = ("unclassified",) if position.asset_class is AssetClass.UNCLASSIFIED else ()
    return PositionResult(
        fund_id=position.fund_id,
        isin=position.isin,
        asset_class=position.asset_class,
        market_value=position.market_value,
        loss_fraction=0.0,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Whole-universe evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskOptions:
    strict_sign: bool = False
    empirical_cdf: bool = False
    fund_factor_two: bool = True
    aum_weighted_class_averages: bool = False
    jobs: int = 1


@dataclass
class Assessment:
    results: list[PositionResult]
    class_averages: ClassAverages
    segment_averages: SegmentAverages
    options: RiskOptions = field(default_factory=RiskOptions)


def _calibration_for(calibrations: Mapping[str, SectorCalibration], segment: str) -> SectorCalibration:
    cal = calibrations.get(segment)
    return cal if cal is not None else calibrations[OTHER]


def instrument_metrics(universe: Universe, exposures: Mapping[str, Exposure]) -> list[InstrumentMetrics]:
    """One record per unique (isin, asset class) for segment averaging."""
    out = []
    seen = set()
    for pos in universe.positions:
        key = (pos.isin, pos.asset_class)
        inst = universe.instruments.get(pos.isin)
        if key in seen or inst is None:
            continue
        seen.add(key)
        exp = exposures[inst.counterparty_id]
        duration = None
        if pos.asset_class in (AssetClass.CORPORATE_BOND, AssetClass.SOVEREIGN_BOND):
            if inst.duration is not None:
                duration = inst.duration
            elif inst.maturity_years is not None:
                duration = bond_sensitivities(inst.maturity_years, inst.coupon or 0.0).duration
        out.append(InstrumentMetrics(inst.isin, pos.asset_class, exp.segment, inst.volatility, inst.cqs, duration))
    return out


def class_averages(results: Sequence[PositionResult], aum_weighted: bool = False) -> ClassAverages:
    """Average change per repriced class: equal-weighted over unique ISINs, or by market value."""
    out = {}
    counts = []
    for cls in (AssetClass.EQUITY, AssetClass.CORPORATE_BOND, AssetClass.SOVEREIGN_BOND):
        rows = [r for r in results if r.asset_class is cls]
        if aum_weighted:
            total = sum(r.market_value for r in rows)
            value = sum(r.loss_fraction * r.market_value for r in rows) / total if total > 0 else 0.0
            counts.append(len(rows))
        else:
            by_isin: dict[str, float] = {}
            for r in rows:
                by_isin.setdefault(r.isin, r.loss_fraction)
            value = math.fsum(by_isin.values()) / len(by_isin) if by_isin else 0.0
            counts.append(len(by_isin))
        out[cls] = value
    return ClassAverages(out[AssetClass.EQUITY], out[AssetClass.CORPORATE_BOND],
                         out[AssetClass.SOVEREIGN_BOND], tuple(counts))


def _chunks(items: Sequence, n: int) -> list[Sequence]:
    n = max(1, min(n, len(items) or 1))
    size = math.ceil(len(items) / n) if items else 0
    return [items[i:i + size] for i in range(0, len(items), size)] if size else []


def assess(
    universe: Universe,
    scenario: Scenario,
    calibrations: Mapping[str, SectorCalibration],
    options: RiskOptions = RiskOptions(),
) -> Assessment:
    """Reprice every position in two phases.

    Phase one covers equities, bonds and cash; phase two prices fund vehicles
    from the phase-one class averages. Results come back in input order.
    """
    cps = universe.counterparties
    exposures = {cid: Exposure.resolve(cp, cps) for cid, cp in cps.items()}
    averages = segment_averages(instrument_metrics(universe, exposures), calibrations)
    sov_cal = calibrations[SOV]
    fund_cal = calibrations[FUND]

    def exposure_of(inst: Instrument) -> Exposure:
        exp = exposures.get(inst.counterparty_id)
        return exp if exp is not None else Exposure(None, CISource.MISSING, OTHER, None)

    def phase_one(pos: Position) -> PositionResult | None:
        cls = pos.asset_class
        if cls in (AssetClass.CASH, AssetClass.UNCLASSIFIED):
            return reprice_cash(pos)
        if cls is AssetClass.FUND_VEHICLE:
            return None
        inst = universe.instruments[pos.isin]
        exp = exposure_of(inst)
        if cls is AssetClass.EQUITY:
            return reprice_equity(pos, inst, exp, _calibration_for(calibrations, exp.segment), scenario,
                                  averages.volatility_for(exp.segment), options.empirical_cdf)
        if cls is AssetClass.CORPORATE_BOND:
            return reprice_corporate_bond(pos, inst, exp, _calibration_for(calibrations, exp.segment), scenario,
                                          averages.cqs_for(exp.segment), averages.duration_for(exp.segment),
                                          options.strict_sign, options.empirical_cdf)
        return reprice_sovereign(pos, inst, exp, scenario, sov_cal, averages.sovereign_cqs,
                                 averages.sovereign_duration, options.strict_sign, options.empirical_cdf)

    positions = list(universe.positions)
    first = _run(phase_one, positions, options.jobs)
    cavg = class_averages([r for r in first if r is not None], options.aum_weighted_class_averages)

    def phase_two(item: tuple[Position, PositionResult | None]) -> PositionResult:
        pos, done = item
        if done is not None:
            return done
        inst = universe.instruments[pos.isin]
        return reprice_fund_vehicle(pos, inst, exposure_of(inst), fund_cal, cavg,
                                    options.fund_factor_two, options.empirical_cdf)

    results = _run(phase_two, list(zip(positions, first)), options.jobs)
    return Assessment(results, cavg, averages, options)


def _run(fn, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunks = _chunks(items, jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(lambda chunk: [fn(x) for x in chunk], chunks)
        return [r for part in parts for r in part]


def lint_scenario(scenario: Scenario, cap: float = CONVEXITY_CAP) -> list[str]:
    """Warn where the convexity term could outweigh the duration term.

    With convexity capped at ``cap * D`` the second-order term stays below the
    first-order term iff ``0.5 * cap * |dy| < 1``.
    """
    limit_bp = 2.0 / cap / BP
    warnings = []
    for bucket, bp in scenario.spread_shock.items():
        if abs(bp) >= limit_bp:
            warnings.append(f"spread shock {bucket} = {bp}bp exceeds {limit_bp:.0f}bp")
    for country, curve in scenario.sovereign_curves.items():
        for k, bp in enumerate(curve, start=1):
            if abs(bp) >= limit_bp:
                warnings.append(f"yield shock {country} tenor {k} = {bp}bp exceeds {limit_bp:.0f}bp")
    return warnings


__all__ = [
    "Assessment", "BondSensitivities", "ClassAverages", "Exposure", "RiskOptions", "UnknownCountry",
    "assess", "bond_sensitivities", "ci_multiplier", "class_averages", "interpolate_tenor",
    "lint_scenario", "past_turning_point", "reprice_cash", "reprice_corporate_bond", "reprice_equity",
    "reprice_fund_vehicle", "reprice_sovereign", "taylor_change",
]
