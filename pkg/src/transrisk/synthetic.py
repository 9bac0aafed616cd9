"""Seeded synthetic universes for tests, golden files and load checks.

Carbon intensities are drawn from each segment's default lognormal, so the
fixtures exercise the same ranges as the shipped calibration. A small group
of concentrated high-carbon equity funds is planted to give the fund
distribution a left tail.
"""

from __future__ import annotations

import numpy as np

from .ingest import default_calibration
from .model import (
    FUND,
    NACE_BUCKETS,
    SOV,
    AssetClass,
    Counterparty,
    Fund,
    Instrument,
    InvestmentStyle,
    Position,
    Universe,
    resolve_segment,
)

# a representative division inside each bucket
_BUCKET_CODES = {
    "A01": "A01.11", "A02-A03": "A02.10", "B05-B09": "B06.10", "C10-C12": "C10.51", "C13-C18": "C17.12",
    "C19": "C19.20", "C20": "C20.14", "C21-C22": "C21.10", "C23": "C23.51", "C24-C25": "C24.10",
    "C26-C28": "C26.11", "C29-C30": "C29.10", "C31-C33": "C33.12", "D35": "D35.11", "E36-E39": "E38.11",
    "F41-F43": "F41.20", "G45-G47": "G47.11", "H49": "H49.10", "H50": "H50.10", "H51": "H51.10",
    "H52-H53": "H52.21", "L68": "L68.20", "Other": "J62.01",
}
LISTED = ("ES", "FR", "DE", "IT", "PT", "NL", "BE", "GB", "US", "PL", "RO", "HU", "CN", "AT", "IE")
UNLISTED = ("MX", "BR", "CA", "AU", "KR", "IN")
HIGH_CARBON = ("B05-B09", "C19", "D35", "C23", "H50")


def generate_universe(
    n_funds: int = 200,
    seed: int = 7,
    positions_per_fund: tuple[int, int] = (8, 30),
    n_issuers: int | None = None,
    sustainable_share: float = 0.15,
    planted_tail: int = 3,
) -> Universe:
    rng = np.random.default_rng(seed)
    cal = default_calibration()
    mean_positions = sum(positions_per_fund) / 2
    if n_issuers is None:
        n_issuers = max(60, int(n_funds * mean_positions / 6))

    counterparties: list[Counterparty] = []
    by_segment: dict[str, list[str]] = {}
    weights = np.array([max(cal[b].n, 3) for b in NACE_BUCKETS], dtype=float)
    weights /= weights.sum()
    segments = rng.choice(len(NACE_BUCKETS), size=n_issuers, p=weights)
    for k, seg_idx in enumerate(segments):
        seg = NACE_BUCKETS[seg_idx]
        c = cal[seg]
        cid = f"CP{k:05d}"
        ci = float(np.round(rng.lognormal(c.ln_mean, c.ln_std), 3))
        parent = None
        r = rng.random()
        if r < 0.06:
            ci = None
        elif r < 0.12 and by_segment.get(seg):
            # subsidiary without own data; parent in the same segment carries it
            parent = by_segment[seg][int(rng.integers(len(by_segment[seg])))]
            ci = None
        counterparties.append(Counterparty(cid, f"Issuer {k}", ci, _BUCKET_CODES[seg], None, parent, None))
        by_segment.setdefault(seg, []).append(cid)

    sov_cal = cal[SOV]
    for country in LISTED + UNLISTED:
        ci = float(np.round(rng.lognormal(sov_cal.ln_mean, sov_cal.ln_std), 3))
        counterparties.append(Counterparty(f"SOV-{country}", f"Republic {country}", ci, None, country))

    fund_cal = cal[FUND]
    n_vehicles = max(20, n_funds // 2)
    for k in range(n_vehicles):
        ci = None if rng.random() < 0.05 else float(np.round(rng.lognormal(fund_cal.ln_mean, fund_cal.ln_std), 3))
        counterparties.append(Counterparty(f"FM{k:04d}", f"Fund manager {k}", ci, FUND))

    instruments: dict[str, Instrument] = {}
    equity_isins: list[str] = []
    corp_isins: list[str] = []
    sov_isins: list[str] = []
    fund_isins: list[str] = []
    cps = [c for c in counterparties if c.id.startswith("CP")]
    for c in cps:
        seg = resolve_segment(c.nace)
        vol_mean = cal[seg].mean_volatility or 35.0
        isin = f"XS{c.id[2:]}EQ"
        vol = None if rng.random() < 0.08 else float(np.round(vol_mean * rng.lognormal(0.0, 0.3), 2))
        instruments[isin] = Instrument(isin, c.id, volatility=vol)
        equity_isins.append(isin)
        for b in range(int(rng.integers(0, 3))):
            isin = f"XS{c.id[2:]}B{b}"
            cqs = None if rng.random() < 0.06 else int(rng.choice([1, 2, 2, 2, 3, 3, 4, 5, 6]))
            maturity = float(np.round(rng.gamma(2.0, 2.5), 2))
            coupon = float(np.round(rng.uniform(0.0, 0.06), 4))
            instruments[isin] = Instrument(isin, c.id, cqs=cqs, maturity_years=maturity, coupon=coupon)
            corp_isins.append(isin)
    for country in LISTED + UNLISTED:
        for b in range(4):
            isin = f"GV{country}{b:02d}"
            maturity = float(np.round(rng.choice([0.5, 2.0, 5.0, 10.0, 15.0, 30.0]) * rng.uniform(0.8, 1.2), 2))
            cqs = int(rng.choice([1, 1, 2, 2, 3]))
            instruments[isin] = Instrument(isin, f"SOV-{country}", cqs=cqs, maturity_years=maturity,
                                           coupon=float(np.round(rng.uniform(0.0, 0.04), 4)), country=country)
            sov_isins.append(isin)
    styles = list(InvestmentStyle)
    for k in range(n_vehicles):
        isin = f"LU{k:06d}FV"
        style = None if rng.random() < 0.05 else styles[int(rng.integers(len(styles)))]
        instruments[isin] = Instrument(isin, f"FM{k:04d}", fund_style=style)
        fund_isins.append(isin)

    pools = {
        AssetClass.EQUITY: equity_isins,
        AssetClass.CORPORATE_BOND: corp_isins,
        AssetClass.SOVEREIGN_BOND: sov_isins,
        AssetClass.FUND_VEHICLE: fund_isins,
    }
    nace_by_id = {c.id: c.nace for c in counterparties}
    high_carbon = [i for i in equity_isins if resolve_segment(nace_by_id[instruments[i].counterparty_id]) in HIGH_CARBON]

    positions: list[Position] = []
    funds: list[Fund] = []
    classes = [AssetClass.EQUITY, AssetClass.CORPORATE_BOND, AssetClass.SOVEREIGN_BOND,
               AssetClass.FUND_VEHICLE, AssetClass.CASH, AssetClass.UNCLASSIFIED]
    for f in range(n_funds):
        fid = f"F{f:04d}"
        planted = f < planted_tail
        if planted:
            mix = np.array([0.95, 0.0, 0.0, 0.0, 0.05, 0.0])
        else:
            mix = rng.dirichlet([1.2, 1.5, 1.5, 2.0, 0.6, 0.05])
        n_pos = int(rng.integers(positions_per_fund[0], positions_per_fund[1] + 1))
        aum = float(np.round(rng.lognormal(18.0, 1.2), 2))
        counts = rng.multinomial(n_pos, mix)
        fund_positions = []
        for cls, count in zip(classes, counts):
            if count == 0:
                continue
            budget = aum * mix[classes.index(cls)]
            split = rng.dirichlet(np.ones(count)) * budget
            for j, mv in enumerate(split):
                if cls in (AssetClass.CASH, AssetClass.UNCLASSIFIED):
                    isin = f"{'CASH' if cls is AssetClass.CASH else 'UNCL'}-{fid}-{j}"
                elif planted and cls is AssetClass.EQUITY and high_carbon:
                    isin = high_carbon[int(rng.integers(len(high_carbon)))]
                else:
                    pool = pools[cls]
                    isin = pool[int(rng.integers(len(pool)))]
                fund_positions.append(Position(fid, isin, cls, float(np.round(mv, 2))))
        labels = frozenset({"sustainable"}) if rng.random() < sustainable_share else frozenset()
        declared = float(np.round(sum(p.market_value for p in fund_positions), 2))
        funds.append(Fund(fid, declared, labels))
        positions.extend(fund_positions)

    return Universe.build(positions, instruments.values(), counterparties, funds)
