"""Domain types for the transition-risk engine.

Everything here is a frozen dataclass or an enum so results can be shared
between workers without copying.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class AssetClass(str, enum.Enum):
    EQUITY = "Equity"
    CORPORATE_BOND = "CorporateBond"
    SOVEREIGN_BOND = "SovereignBond"
    FUND_VEHICLE = "FundVehicle"
    CASH = "Cash"
    UNCLASSIFIED = "Unclassified"

    @classmethod
    def parse(cls, text: str) -> "AssetClass":
        key = re.sub(r"[\s_\-]", "", text).lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        aliases = {
            "equities": cls.EQUITY,
            "corporate": cls.CORPORATE_BOND,
            "sovereign": cls.SOVEREIGN_BOND,
            "government": cls.SOVEREIGN_BOND,
            "fund": cls.FUND_VEHICLE,
            "otherfunds": cls.FUND_VEHICLE,
            "notclassified": cls.UNCLASSIFIED,
        }
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown asset class {text!r}")


REPRICED_CLASSES = (AssetClass.EQUITY, AssetClass.CORPORATE_BOND, AssetClass.SOVEREIGN_BOND)


class InvestmentStyle(str, enum.Enum):
    EQUITIES = "Equities"
    MIXED_EQUITIES = "MixedEquities"
    MIXED_BONDS = "MixedBonds"
    BONDS = "Bonds"
    GOVERNMENT_DEBT = "GovernmentDebt"
    OTHERS = "Others"

    @property
    def weights(self) -> "StyleWeights":
        return STYLE_WEIGHTS[self]

    @classmethod
    def parse(cls, text: str | None) -> "InvestmentStyle":
        """Resolve a style label; anything unrecognised is ``OTHERS``."""
        if not text:
            return cls.OTHERS
        key = re.sub(r"[\s_\-]", "", text).lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        return cls.OTHERS


@dataclass(frozen=True)
class StyleWeights:
    equity: float
    corporate: float
    sovereign: float
    cash: float

    def total(self) -> float:
        return self.equity + self.corporate + self.sovereign + self.cash


# Representative holdings of a fund vehicle by declared investment style.
STYLE_WEIGHTS: dict[InvestmentStyle, StyleWeights] = {
    InvestmentStyle.EQUITIES: StyleWeights(0.85, 0.05, 0.05, 0.05),
    InvestmentStyle.MIXED_EQUITIES: StyleWeights(0.65, 0.15, 0.15, 0.05),
    InvestmentStyle.MIXED_BONDS: StyleWeights(0.25, 0.35, 0.35, 0.05),
    InvestmentStyle.BONDS: StyleWeights(0.0, 0.75, 0.20, 0.05),
    InvestmentStyle.GOVERNMENT_DEBT: StyleWeights(0.0, 0.20, 0.75, 0.05),
    InvestmentStyle.OTHERS: StyleWeights(0.25, 0.35, 0.35, 0.05),
}


# ---------------------------------------------------------------------------
# NACE segments
# ---------------------------------------------------------------------------

OTHER = "Other"
SOV = "SOV"
FUND = "FUND"

# (bucket, first division, last division)
_NACE_RANGES: tuple[tuple[str, int, int], ...] = (
    ("A01", 1, 1),
    ("A02-A03", 2, 3),
    ("B05-B09", 5, 9),
    ("C10-C12", 10, 12),
    ("C13-C18", 13, 18),
    ("C19", 19, 19),
    ("C20", 20, 20),
    ("C21-C22", 21, 22),
    ("C23", 23, 23),
    ("C24-C25", 24, 25),
    ("C26-C28", 26, 28),
    ("C29-C30", 29, 30),
    ("C31-C33", 31, 33),
    ("D35", 35, 35),
    ("E36-E39", 36, 39),
    ("F41-F43", 41, 43),
    ("G45-G47", 45, 47),
    ("H49", 49, 49),
    ("H50", 50, 50),
    ("H51", 51, 51),
    ("H52-H53", 52, 53),
    ("L68", 68, 68),
)

NACE_BUCKETS: tuple[str, ...] = tuple(b for b, _, _ in _NACE_RANGES) + (OTHER,)
SEGMENTS: tuple[str, ...] = NACE_BUCKETS + (SOV, FUND)

_SEGMENT_ALIASES = {
    "OTHERNACE": OTHER,
    "OTHERACTIVITIES": OTHER,
    "SOVEREIGN": SOV,
    "SOVEREIGNDEBT": SOV,
    "FUNDS": FUND,
    "OTHERFUNDVEHICLES": FUND,
    "OTHERFUNDS": FUND,
}

_CODE_RE = re.compile(r"^([A-Z])?\s*(\d{1,2})(?:[.\s]?(\d{1,2}))?$")
_RANGE_RE = re.compile(r"^([A-Z])?(\d{1,2})\s*-\s*([A-Z])?(\d{1,2})$")


def _bucket_for_division(division: int) -> str:
    for bucket, lo, hi in _NACE_RANGES:
        if lo <= division <= hi:
            return bucket
    return OTHER


def nace_division(code: str | None) -> int | None:
    """Two-digit NACE division of a raw code (``"C20"``, ``"35.11"``, ``"D3511"``)."""
    if not code:
        return None
    text = code.strip().upper()
    m = _CODE_RE.match(text)
    if m:
        return int(m.group(2))
    m = re.match(r"^([A-Z])?(\d{2})(\d{1,2})$", text)
    if m:
        return int(m.group(2))
    return None


def resolve_segment(code: str | None) -> str:
    """Map a raw NACE code or a bucket label onto a canonical segment.

    Idempotent: resolving a canonical bucket returns it unchanged.
    """
    if code is None:
        return OTHER
    text = code.strip()
    if text in SEGMENTS:
        return text
    upper = text.upper()
    squashed = re.sub(r"[\s_\-]", "", upper)
    if squashed in _SEGMENT_ALIASES:
        return _SEGMENT_ALIASES[squashed]
    for seg in SEGMENTS:
        if seg.upper() == upper:
            return seg
    m = _RANGE_RE.match(upper)
    if m:
        return _bucket_for_division(int(m.group(2)))
    division = nace_division(upper)
    if division is None:
        return OTHER
    return _bucket_for_division(division)


def normalize_nace4(code: str | None) -> str | None:
    """Canonical ``"dd.dd"`` / ``"dd.d"`` / ``"dd"`` form of a NACE code."""
    if not code:
        return None
    text = code.strip().upper().lstrip("ABCDEFGHIJKLMNOPQRSTU").strip()
    m = re.match(r"^(\d{2})\.?(\d{1,2})?$", text)
    if not m:
        return None
    return m.group(1) if m.group(2) is None else f"{m.group(1)}.{m.group(2)}"


def looks_like_nace(code: str) -> bool:
    return any(ch.isdigit() for ch in code) or code.strip() in SEGMENTS


# ---------------------------------------------------------------------------
# Universe records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Counterparty:
    id: str
    name: str = ""
    carbon_intensity: float | None = None
    nace: str | None = None
    country: str | None = None
    parent_id: str | None = None
    ultimate_parent_id: str | None = None

    def __post_init__(self):
        ci = self.carbon_intensity
        if ci is not None and (math.isnan(ci) or ci < 0):
            raise ValueError(f"counterparty {self.id}: carbon intensity must be >= 0, got {ci}")


@dataclass(frozen=True)
class Instrument:
    isin: str
    counterparty_id: str
    cqs: int | None = None
    maturity_years: float | None = None
    coupon: float | None = None
    volatility: float | None = None  # percent, annualised
    fund_style: InvestmentStyle | None = None
    country: str | None = None
    duration: float | None = None  # explicit override of the maturity/coupon estimate
    convexity: float | None = None
    cqs_source: str | None = field(default=None, compare=False)  # how the step was chosen; diagnostic only

    def __post_init__(self):
        if self.maturity_years is not None and self.maturity_years < 0:
            raise ValueError(f"instrument {self.isin}: negative maturity")
        if self.coupon is not None and self.coupon <= -1:
            raise ValueError(f"instrument {self.isin}: coupon must be > -1")
        if self.volatility is not None and self.volatility <= 0:
            raise ValueError(f"instrument {self.isin}: volatility must be positive")


@dataclass(frozen=True)
class Position:
    fund_id: str
    isin: str
    asset_class: AssetClass
    market_value: float


@dataclass(frozen=True)
class Fund:
    fund_id: str
    aum: float | None = None
    labels: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Universe:
    funds: Mapping[str, Fund]
    positions: tuple[Position, ...]
    instruments: Mapping[str, Instrument]
    counterparties: Mapping[str, Counterparty]

    @classmethod
    def build(
        cls,
        positions: Iterable[Position],
        instruments: Iterable[Instrument] = (),
        counterparties: Iterable[Counterparty] = (),
        funds: Iterable[Fund] = (),
    ) -> "Universe":
        positions = tuple(positions)
        fund_map = {f.fund_id: f for f in funds}
        for p in positions:
            fund_map.setdefault(p.fund_id, Fund(p.fund_id))
        return cls(
            funds=dict(sorted(fund_map.items())),
            positions=positions,
            instruments={i.isin: i for i in instruments},
            counterparties={c.id: c for c in counterparties},
        )


# ---------------------------------------------------------------------------
# Scenario and calibration
# ---------------------------------------------------------------------------

N_TENORS = 10


@dataclass(frozen=True)
class Scenario:
    name: str
    equity_shock: Mapping[str, float]  # fraction, negative = loss
    spread_shock: Mapping[str, float]  # basis points
    sovereign_curves: Mapping[str, tuple[float, ...]]  # bp at tenors 1..9, 10+
    cprs_map: Mapping[str, str] | None = None
    tec_tac_table: Mapping[str, tuple[float, float]] | None = None

    def __post_init__(self):
        for label, table in (("equity", self.equity_shock), ("spread", self.spread_shock)):
            if OTHER not in table:
                raise ValueError(f"{label} shock table needs an {OTHER!r} fallback entry")
        for country, curve in self.sovereign_curves.items():
            if len(curve) != N_TENORS:
                raise ValueError(f"sovereign curve {country} has {len(curve)} points, expected {N_TENORS}")

    def equity_for(self, segment: str) -> float:
        return self.equity_shock.get(segment, self.equity_shock[OTHER])

    def spread_for(self, segment: str) -> float:
        return self.spread_shock.get(segment, self.spread_shock[OTHER])

    def average_curve(self) -> tuple[float, ...] | None:
        """Cross-country mean shock at each tenor, or None without curves."""
        if not self.sovereign_curves:
            return None
        curves = list(self.sovereign_curves.values())
        return tuple(sum(c[k] for c in curves) / len(curves) for k in range(N_TENORS))

    def zeroed(self) -> "Scenario":
        return Scenario(
            name=f"{self.name}-zero",
            equity_shock={k: 0.0 for k in self.equity_shock},
            spread_shock={k: 0.0 for k in self.spread_shock},
            sovereign_curves={k: (0.0,) * N_TENORS for k in self.sovereign_curves},
            cprs_map=self.cprs_map,
            tec_tac_table=self.tec_tac_table,
        )


@dataclass(frozen=True)
class SectorCalibration:
    segment: str
    n: int
    mean: float
    std: float
    ln_mean: float
    ln_std: float
    r2: float
    mean_volatility: float | None = None
    mean_cqs: float | None = None
    mean_duration: float | None = None
    samples: tuple[float, ...] | None = field(default=None, repr=False, compare=False)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Multipliers:
    ci_m: float = 1.0
    vol_m: float | None = None
    cqs_m: float | None = None
    ci_backfilled: bool = False
    vol_backfilled: bool = False
    cqs_backfilled: bool = False


@dataclass(frozen=True)
class PositionResult:
    fund_id: str
    isin: str
    asset_class: AssetClass
    market_value: float
    loss_fraction: float
    multipliers: Multipliers = Multipliers()
    segment: str | None = None
    country: str | None = None
    nace: str | None = None
    carbon_intensity: float | None = None
    cqs: int | None = None
    duration: float | None = None
    volatility: float | None = None
    style: InvestmentStyle | None = None
    flags: tuple[str, ...] = ()

    @property
    def loss_eur(self) -> float:
        return self.loss_fraction * self.market_value


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

DANGLING_INSTRUMENT = "dangling instrument"
DANGLING_COUNTERPARTY = "dangling counterparty"
PARENT_CYCLE = "parent cycle"
CQS_RANGE = "cqs out of range"
NEGATIVE_VALUE = "negative market value"
AUM_MISMATCH = "aum mismatch"
MISSING_COUNTRY = "missing country"


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    detail: str = ""
    fatal: bool = True


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def accepted(self) -> bool:
        return not any(f.fatal for f in self.findings)

    def of_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]


def _parent_links(cp: Counterparty) -> list[str]:
    return [p for p in (cp.parent_id, cp.ultimate_parent_id) if p]


def _find_cycles(counterparties: Mapping[str, Counterparty]) -> list[str]:
    """Ids of counterparties that sit on a parent-link cycle."""
    state: dict[str, int] = {}  # 1 = on stack, 2 = done
    on_cycle: set[str] = set()

    for root in sorted(counterparties):
        if root in state:
            continue
        stack = [(root, iter(_parent_links(counterparties[root])))]
        path = [root]
        state[root] = 1
        while stack:
            node, links = stack[-1]
            nxt = next(links, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
                continue
            if nxt not in counterparties:
                continue
            if state.get(nxt) == 1:
                on_cycle.update(path[path.index(nxt):])
            elif nxt not in state:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(_parent_links(counterparties[nxt]))))
    return sorted(on_cycle)


def _sovereign_country(inst: Instrument, counterparties: Mapping[str, Counterparty]) -> str | None:
    if inst.country:
        return inst.country
    cp = counterparties.get(inst.counterparty_id)
    if cp is None:
        return None
    for node_id in (cp.id, cp.parent_id, cp.ultimate_parent_id):
        node = counterparties.get(node_id) if node_id else None
        if node is not None and node.country:
            return node.country
    return None


def validate_universe(
    funds: Mapping[str, Fund],
    positions: Iterable[Position],
    instruments: Mapping[str, Instrument],
    counterparties: Mapping[str, Counterparty],
    aum_rtol: float = 1e-6,
) -> ValidationReport:
    """Referential-integrity and range checks over a loaded universe."""
    findings: list[Finding] = []
    totals: dict[str, float] = {}
    for pos in positions:
        totals[pos.fund_id] = totals.get(pos.fund_id, 0.0) + pos.market_value
        if pos.market_value < 0:
            findings.append(Finding(NEGATIVE_VALUE, f"{pos.fund_id}/{pos.isin}", str(pos.market_value)))
        if pos.asset_class in (AssetClass.CASH, AssetClass.UNCLASSIFIED):
            continue
        inst = instruments.get(pos.isin)
        if inst is None:
            findings.append(Finding(DANGLING_INSTRUMENT, f"{pos.fund_id}/{pos.isin}"))
        elif pos.asset_class is AssetClass.SOVEREIGN_BOND and _sovereign_country(inst, counterparties) is None:
            findings.append(Finding(MISSING_COUNTRY, f"{pos.fund_id}/{pos.isin}"))

    for isin in sorted(instruments):
        inst = instruments[isin]
        if inst.counterparty_id not in counterparties:
            findings.append(Finding(DANGLING_COUNTERPARTY, isin, inst.counterparty_id))
        if inst.cqs is not None and not 1 <= inst.cqs <= 6:
            findings.append(Finding(CQS_RANGE, isin, str(inst.cqs)))

    for cid in sorted(counterparties):
        for link in _parent_links(counterparties[cid]):
            if link not in counterparties:
                findings.append(Finding(DANGLING_COUNTERPARTY, cid, link))
    for cid in _find_cycles(counterparties):
        findings.append(Finding(PARENT_CYCLE, cid))

    for fid in sorted(funds):
        aum = funds[fid].aum
        if aum is None:
            continue
        total = totals.get(fid, 0.0)
        if abs(total - aum) > aum_rtol * max(abs(aum), abs(total)):
            findings.append(Finding(AUM_MISMATCH, fid, f"declared {aum}, positions sum to {total}"))
    return ValidationReport(tuple(findings))
