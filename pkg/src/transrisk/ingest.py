"""Loading and writing of portfolio, reference, scenario and calibration files.

All inputs are UTF-8 comma-separated text with a header row. Empty cells
mean "not available".
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import os
import tempfile
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .model import (
    FUND,
    N_TENORS,
    OTHER,
    SOV,
    AssetClass,
    Counterparty,
    Fund,
    Instrument,
    InvestmentStyle,
    Position,
    Scenario,
    SectorCalibration,
    Universe,
    looks_like_nace,
    normalize_nace4,
    resolve_segment,
)

log = logging.getLogger(__name__)


class SchemaError(ValueError):
    """A file is missing a required column or has an unreadable cell."""


class DomainError(ValueError):
    """A value is readable but outside its permitted domain."""


class UnknownRating(ValueError):
    pass


# ---------------------------------------------------------------------------
# Ratings
# ---------------------------------------------------------------------------


class Agency(str, enum.Enum):
    FITCH = "Fitch"
    MOODYS = "Moodys"
    SP = "SP"

    @classmethod
    def parse(cls, text: str) -> "Agency":
        key = text.strip().lower().replace("'", "").replace("&", "").replace(" ", "")
        lookup = {"fitch": cls.FITCH, "moodys": cls.MOODYS, "moody": cls.MOODYS,
                  "sp": cls.SP, "s&p": cls.SP, "standardandpoors": cls.SP}
        if key not in lookup:
            raise UnknownRating(f"unknown agency {text!r}")
        return lookup[key]


_FITCH_SP_STEPS = (
    ("AAA", "AA+", "AA", "AA-"),
    ("A+", "A", "A-"),
    ("BBB+", "BBB", "BBB-"),
    ("BB+", "BB", "BB-"),
    ("B+", "B", "B-"),
)
_FITCH_SP_BELOW = ("CCC+", "CCC", "CCC-", "CC", "C", "D")
_MOODYS_STEPS = (
    ("Aaa", "Aa1", "Aa2", "Aa3"),
    ("A1", "A2", "A3"),
    ("Baa1", "Baa2", "Baa3"),
    ("Ba1", "Ba2", "Ba3"),
    ("B1", "B2", "B3"),
)
_MOODYS_BELOW = ("Caa1", "Caa2", "Caa3", "Ca", "C")


def _scale(steps, below) -> dict[str, int]:
    table = {sym: cqs for cqs, group in enumerate(steps, start=1) for sym in group}
    table.update({sym: 6 for sym in below})
    return table


RATING_SCALES: dict[Agency, dict[str, int]] = {
    Agency.FITCH: _scale(_FITCH_SP_STEPS, _FITCH_SP_BELOW + ("RD", "DDD", "DD")),
    Agency.SP: _scale(_FITCH_SP_STEPS, _FITCH_SP_BELOW + ("SD",)),
    Agency.MOODYS: _scale(_MOODYS_STEPS, _MOODYS_BELOW),
}


def rating_to_cqs(rating: str, agency: Agency | str) -> int:
    """Credit quality step (1-6) of a long-term rating on an agency scale."""
    if not isinstance(agency, Agency):
        agency = Agency.parse(agency)
    symbol = rating.strip()
    try:
        return RATING_SCALES[agency][symbol]
    except KeyError:
        raise UnknownRating(f"{symbol!r} is not on the {agency.value} scale") from None


def parse_rating_field(text: str) -> tuple[int | None, str | None]:
    """Read the ``rating_or_cqs`` cell.

    Accepts an integer CQS, ``Agency:Symbol`` pairs, or bare symbols; several
    entries separated by ``;`` or ``|`` resolve to the worst (highest) step.
    Returns ``(cqs, source)`` where ``source`` records how the step was chosen.
    """
    text = text.strip()
    if not text:
        return None, None
    parts = [p.strip() for p in text.replace("|", ";").split(";") if p.strip()]
    steps: list[tuple[int, str]] = []
    for part in parts:
        if part.isdigit():
            steps.append((int(part), "direct"))
            continue
        if ":" in part:
            agency_text, symbol = part.split(":", 1)
            agency = Agency.parse(agency_text)
            steps.append((rating_to_cqs(symbol, agency), agency.value))
            continue
        # bare symbol: Fitch and S&P share a scale, Moody's is distinguishable by case
        if part in RATING_SCALES[Agency.SP]:
            steps.append((RATING_SCALES[Agency.SP][part], "SP"))
        elif part in RATING_SCALES[Agency.MOODYS]:
            steps.append((RATING_SCALES[Agency.MOODYS][part], "Moodys"))
        else:
            raise UnknownRating(f"unrecognised rating {part!r}")
    cqs = max(s for s, _ in steps)
    if len(steps) == 1:
        return cqs, steps[0][1]
    return cqs, "worst-of:" + ",".join(src for _, src in steps)


# ---------------------------------------------------------------------------
# Countries
# ---------------------------------------------------------------------------

COUNTRY_ALIASES = {
    "AUSTRIA": "AT", "BELGIUM": "BE", "BULGARIA": "BG", "CHINA": "CN", "CROATIA": "HR",
    "CYPRUS": "CY", "CZECH REPUBLIC": "CZ", "CZECHIA": "CZ", "DENMARK": "DK", "ESTONIA": "EE",
    "FINLAND": "FI", "FRANCE": "FR", "GERMANY": "DE", "GREECE": "GR", "HUNGARY": "HU",
    "ICELAND": "IS", "IRELAND": "IE", "ITALY": "IT", "JAPAN": "JP", "LATVIA": "LV",
    "LIECHTENSTEIN": "LI", "LITHUANIA": "LT", "LUXEMBOURG": "LU", "MALTA": "MT",
    "NETHERLANDS": "NL", "NORWAY": "NO", "POLAND": "PL", "PORTUGAL": "PT", "ROMANIA": "RO",
    "SLOVAKIA": "SK", "SLOVENIA": "SI", "SPAIN": "ES", "SWEDEN": "SE", "SWITZERLAND": "CH",
    "UNITED KINGDOM": "GB", "UK": "GB", "UNITED STATES": "US", "USA": "US", "EL": "GR",
}


def normalize_country(text: str | None) -> str | None:
    if text is None or not text.strip():
        return None
    key = " ".join(text.strip().upper().split())
    if key in COUNTRY_ALIASES:
        return COUNTRY_ALIASES[key]
    if len(key) == 2 and key.isalpha():
        return key
    raise DomainError(f"unrecognised country {text!r}")


# ---------------------------------------------------------------------------
# Backfill along the parent chain
# ---------------------------------------------------------------------------


class CISource(enum.IntEnum):
    OWN = 0
    PARENT = 1
    ULTIMATE_PARENT = 2
    MISSING = 3


def _chain(cp: Counterparty, universe: Mapping[str, Counterparty]) -> list[tuple[Counterparty, CISource]]:
    chain = [(cp, CISource.OWN)]
    for link, source in ((cp.parent_id, CISource.PARENT), (cp.ultimate_parent_id, CISource.ULTIMATE_PARENT)):
        if link and link != cp.id and link in universe:
            chain.append((universe[link], source))
    return chain


def resolve_carbon_intensity(
    cp: Counterparty, universe: Mapping[str, Counterparty]
) -> tuple[float | None, CISource]:
    """First available carbon intensity along self, parent, ultimate parent."""
    for node, source in _chain(cp, universe):
        if node.carbon_intensity is not None:
            return node.carbon_intensity, source
    return None, CISource.MISSING


def resolve_nace(cp: Counterparty, universe: Mapping[str, Counterparty]) -> str | None:
    for node, _ in _chain(cp, universe):
        if node.nace:
            return node.nace
    return None


def resolve_country(cp: Counterparty, universe: Mapping[str, Counterparty]) -> str | None:
    for node, _ in _chain(cp, universe):
        if node.country:
            return node.country
    return None


def counterparty_segment(cp: Counterparty, universe: Mapping[str, Counterparty]) -> str:
    """Calibration segment a counterparty's carbon intensity belongs to."""
    nace = resolve_nace(cp, universe)
    if nace is not None:
        return resolve_segment(nace)
    if resolve_country(cp, universe) is not None:
        return SOV
    return OTHER


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------


def _read_rows(path: str | os.PathLike, required: Iterable[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        return [{k: (v or "").strip() for k, v in row.items() if k is not None} for row in reader]


def _float(row: Mapping[str, str], key: str, where: str) -> float | None:
    text = row.get(key, "")
    if text == "" or text == "-":
        return None
    try:
        value = float(text.replace(",", "")) if text.count(",") and "." in text else float(text)
    except ValueError:
        raise SchemaError(f"{where}: column {key!r} is not a number: {text!r}") from None
    if math.isnan(value):
        return None
    return value


def _text(row: Mapping[str, str], key: str) -> str | None:
    value = row.get(key, "")
    return value or None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


_UMASK = _current_umask()


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        # mkstemp creates 0600; give the result the mode a plain open() would
        os.chmod(tmp, 0o666 & ~_UMASK)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: list[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Universe files
# ---------------------------------------------------------------------------

POSITION_COLUMNS = ["fund_id", "isin", "asset_class", "market_value"]
INSTRUMENT_COLUMNS = ["isin", "counterparty_id", "rating_or_cqs", "maturity_years", "coupon",
                      "volatility_pct", "fund_style", "country"]
INSTRUMENT_OPTIONAL = ["duration", "convexity"]
COUNTERPARTY_COLUMNS = ["id", "name", "carbon_intensity", "nace_code_or_country", "parent_id",
                        "ultimate_parent_id"]
FUND_COLUMNS = ["fund_id", "aum", "labels"]


def load_positions(path) -> list[Position]:
    out = []
    for lineno, row in enumerate(_read_rows(path, POSITION_COLUMNS), start=2):
        where = f"{path}:{lineno}"
        mv = _float(row, "market_value", where)
        if mv is None:
            raise SchemaError(f"{where}: market_value is required")
        try:
            asset_class = AssetClass.parse(row["asset_class"])
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        out.append(Position(row["fund_id"], row["isin"], asset_class, mv))
    return out


def load_instruments(path) -> list[Instrument]:
    out = []
    seen: set[str] = set()
    for lineno, row in enumerate(_read_rows(path, INSTRUMENT_COLUMNS), start=2):
        where = f"{path}:{lineno}"
        isin = row["isin"]
        if isin in seen:
            raise DomainError(f"{where}: duplicate isin {isin}")
        seen.add(isin)
        try:
            cqs, cqs_source = parse_rating_field(row["rating_or_cqs"])
        except UnknownRating as exc:
            raise DomainError(f"{where}: {exc}") from None
        style = row.get("fund_style", "")
        try:
            out.append(Instrument(
                isin=isin,
                counterparty_id=row["counterparty_id"],
                cqs=cqs,
                maturity_years=_float(row, "maturity_years", where),
                coupon=_float(row, "coupon", where),
                volatility=_float(row, "volatility_pct", where),
                fund_style=InvestmentStyle.parse(style) if style else None,
                country=normalize_country(row.get("country")),
                duration=_float(row, "duration", where),
                convexity=_float(row, "convexity", where),
                cqs_source=cqs_source,
            ))
        except ValueError as exc:
            raise DomainError(f"{where}: {exc}") from None
    return out


def load_counterparties(path) -> list[Counterparty]:
    out = []
    for lineno, row in enumerate(_read_rows(path, COUNTERPARTY_COLUMNS), start=2):
        where = f"{path}:{lineno}"
        code = row["nace_code_or_country"]
        nace = country = None
        if code:
            if looks_like_nace(code) or code.upper() in (FUND, SOV):
                nace = code
            else:
                country = normalize_country(code)
        try:
            out.append(Counterparty(
                id=row["id"],
                name=row["name"],
                carbon_intensity=_float(row, "carbon_intensity", where),
                nace=nace,
                country=country,
                parent_id=_text(row, "parent_id"),
                ultimate_parent_id=_text(row, "ultimate_parent_id"),
            ))
        except ValueError as exc:
            raise DomainError(f"{where}: {exc}") from None
    return out


def load_funds(path) -> list[Fund]:
    out = []
    for lineno, row in enumerate(_read_rows(path, ["fund_id"]), start=2):
        labels = frozenset(x.strip() for x in row.get("labels", "").split(";") if x.strip())
        out.append(Fund(row["fund_id"], _float(row, "aum", f"{path}:{lineno}"), labels))
    return out


def load_universe(positions, instruments, counterparties, funds=None) -> Universe:
    return Universe.build(
        load_positions(positions),
        load_instruments(instruments),
        load_counterparties(counterparties),
        load_funds(funds) if funds else (),
    )


def _rating_cell(inst: Instrument) -> str:
    return "" if inst.cqs is None else str(inst.cqs)


def write_universe(universe: Universe, directory) -> dict[str, Path]:
    """Write a universe as the five-file layout (funds included). Returns the paths."""
    directory = Path(directory)
    paths = {name: directory / f"{name}.csv" for name in ("positions", "instruments", "counterparties", "funds")}
    write_atomic(paths["positions"], csv_text(
        POSITION_COLUMNS,
        ((p.fund_id, p.isin, p.asset_class, p.market_value) for p in universe.positions),
    ))
    write_atomic(paths["instruments"], csv_text(
        INSTRUMENT_COLUMNS + INSTRUMENT_OPTIONAL,
        ((i.isin, i.counterparty_id, _rating_cell(i), i.maturity_years, i.coupon, i.volatility,
          i.fund_style, i.country, i.duration, i.convexity) for i in universe.instruments.values()),
    ))
    write_atomic(paths["counterparties"], csv_text(
        COUNTERPARTY_COLUMNS,
        ((c.id, c.name, c.carbon_intensity, c.nace or c.country, c.parent_id, c.ultimate_parent_id)
         for c in universe.counterparties.values()),
    ))
    write_atomic(paths["funds"], csv_text(
        FUND_COLUMNS,
        ((f.fund_id, f.aum, ";".join(sorted(f.labels))) for f in universe.funds.values()),
    ))
    return paths


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

SECTOR_COLUMNS = ["nace_bucket", "equity_pct", "spread_bp"]
SOVEREIGN_COLUMNS = ["country"] + [f"y{k}" for k in range(1, 10)] + ["y10plus"]


def _sector_tables(rows: Iterable[Mapping], where: str) -> tuple[dict[str, float], dict[str, float]]:
    equity: dict[str, float] = {}
    spread: dict[str, float] = {}
    for row in rows:
        bucket = resolve_segment(str(row["nace_bucket"]))
        if bucket in equity:
            raise DomainError(f"{where}: duplicate bucket {bucket}")
        eq = float(row["equity_pct"])
        if eq > 0:
            log.warning("%s: positive equity shock %.2f%% for %s", where, eq, bucket)
        equity[bucket] = eq / 100.0
        spread[bucket] = float(row["spread_bp"])
    if OTHER not in equity:
        raise DomainError(f"{where}: no {OTHER!r} bucket")
    return equity, spread


def _sovereign_table(rows: Iterable[Mapping], where: str) -> dict[str, tuple[float, ...]]:
    curves: dict[str, tuple[float, ...]] = {}
    for row in rows:
        country = normalize_country(str(row["country"]))
        if country in curves:
            raise DomainError(f"{where}: duplicate country {country}")
        curve = tuple(float(row[c]) for c in SOVEREIGN_COLUMNS[1:])
        if len(curve) != N_TENORS:
            raise DomainError(f"{where}: {country} needs {N_TENORS} tenor points")
        curves[country] = curve
    return dict(sorted(curves.items()))


def load_scenario(sector_file, sovereign_file=None, name: str = "delayed-transition",
                  cprs_file=None, tec_tac_file=None) -> Scenario:
    rows = _read_rows(sector_file, SECTOR_COLUMNS)
    for row in rows:
        for key in ("equity_pct", "spread_bp"):
            if _float(row, key, str(sector_file)) is None:
                raise SchemaError(f"{sector_file}: empty {key} for {row['nace_bucket']}")
    equity, spread = _sector_tables(rows, str(sector_file))
    curves = {}
    if sovereign_file is not None and os.path.getsize(sovereign_file) > 0:
        sov_rows = _read_rows(sovereign_file, ["country"])
        if sov_rows:
            _read_rows(sovereign_file, SOVEREIGN_COLUMNS)
        curves = _sovereign_table(sov_rows, str(sovereign_file))
    return Scenario(
        name=name,
        equity_shock=equity,
        spread_shock=spread,
        sovereign_curves=curves,
        cprs_map=load_cprs_map(cprs_file) if cprs_file else None,
        tec_tac_table=load_tec_tac(tec_tac_file) if tec_tac_file else None,
    )


def load_scenario_json(path) -> Scenario:
    """Read the JSON bundle form of a scenario.

    Layout::

        {"name": ..., "sectors": [{"nace_bucket", "equity_pct", "spread_bp"}, ...],
         "sovereigns": [{"country", "y1", ..., "y9", "y10plus"}, ...],
         "cprs_map": {bucket: label}, "tec_tac": {nace: [tec, tac]}}
    """
    with open(path, encoding="utf-8") as fh:
        bundle = json.load(fh)
    for key in ("sectors",):
        if key not in bundle:
            raise SchemaError(f"{path}: missing key {key!r}")
    equity, spread = _sector_tables(bundle["sectors"], str(path))
    curves = _sovereign_table(bundle.get("sovereigns", []), str(path))
    tec_tac = bundle.get("tec_tac")
    return Scenario(
        name=bundle.get("name", "scenario"),
        equity_shock=equity,
        spread_shock=spread,
        sovereign_curves=curves,
        cprs_map={resolve_segment(k): v for k, v in bundle["cprs_map"].items()} if bundle.get("cprs_map") else None,
        tec_tac_table={normalize_nace4(k): (float(v[0]), float(v[1])) for k, v in tec_tac.items()} if tec_tac else None,
    )


def scenario_to_json(scenario: Scenario) -> str:
    bundle = {
        "name": scenario.name,
        "sectors": [
            {"nace_bucket": b, "equity_pct": scenario.equity_shock[b] * 100.0, "spread_bp": scenario.spread_shock[b]}
            for b in scenario.equity_shock
        ],
        "sovereigns": [
            dict(country=c, **{col: v for col, v in zip(SOVEREIGN_COLUMNS[1:], curve)})
            for c, curve in scenario.sovereign_curves.items()
        ],
    }
    if scenario.cprs_map:
        bundle["cprs_map"] = dict(scenario.cprs_map)
    if scenario.tec_tac_table:
        bundle["tec_tac"] = {k: list(v) for k, v in scenario.tec_tac_table.items()}
    return json.dumps(bundle, indent=2)


def load_cprs_map(path) -> dict[str, str]:
    rows = _read_rows(path, ["nace_bucket", "cprs"])
    return {resolve_segment(r["nace_bucket"]): r["cprs"] for r in rows if r["cprs"]}


def load_tec_tac(path) -> dict[str, tuple[float, float]]:
    table = {}
    for lineno, row in enumerate(_read_rows(path, ["nace", "tec", "tac"]), start=2):
        key = normalize_nace4(row["nace"])
        if key is None:
            raise DomainError(f"{path}:{lineno}: unreadable NACE code {row['nace']!r}")
        tec, tac = _float(row, "tec", str(path)), _float(row, "tac", str(path))
        if tec is None or tac is None or not (0 <= tec <= 1 and 0 <= tac <= 1):
            raise DomainError(f"{path}:{lineno}: tec/tac must be in [0, 1]")
        table[key] = (tec, tac)
    return table


# ---------------------------------------------------------------------------
# Calibration files
# ---------------------------------------------------------------------------

CALIBRATION_COLUMNS = ["segment", "n", "mean", "std", "ln_mean", "ln_std", "r2",
                       "mean_volatility", "mean_cqs", "mean_duration"]


def load_calibration(path) -> dict[str, SectorCalibration]:
    """Read a calibration table.

    The lognormal parameters are re-derived from ``mean``/``std`` at full
    precision; printed ``ln_mean``/``ln_std`` columns are kept only as
    reported values and never feed the engine.
    """
    from .calib import fit_lognormal

    out = {}
    for lineno, row in enumerate(_read_rows(path, CALIBRATION_COLUMNS[:4]), start=2):
        where = f"{path}:{lineno}"
        seg = row["segment"]
        seg = seg if seg == "ALL" else resolve_segment(seg)
        mean, std = _float(row, "mean", where), _float(row, "std", where)
        if mean is None or std is None:
            raise SchemaError(f"{where}: mean and std are required")
        mu, sigma = fit_lognormal(mean, std * std)
        r2 = _float(row, "r2", where)
        out[seg] = SectorCalibration(
            segment=seg,
            n=int(_float(row, "n", where) or 0),
            mean=mean,
            std=std,
            ln_mean=mu,
            ln_std=sigma,
            r2=1.0 if r2 is None else r2,
            mean_volatility=_float(row, "mean_volatility", where),
            mean_cqs=_float(row, "mean_cqs", where),
            mean_duration=_float(row, "mean_duration", where),
        )
    return out


def read_printed_calibration(path) -> list[dict[str, float | str]]:
    """Rows of a calibration file exactly as written (for checking published values)."""
    rows = []
    for row in _read_rows(path, CALIBRATION_COLUMNS[:6]):
        rows.append({k: (row[k] if k == "segment" else float(row[k])) for k in CALIBRATION_COLUMNS[:6]})
    return rows


def calibration_csv(cals: Mapping[str, SectorCalibration]) -> str:
    return csv_text(CALIBRATION_COLUMNS, (
        (c.segment, c.n, c.mean, c.std, c.ln_mean, c.ln_std, c.r2,
         c.mean_volatility, c.mean_cqs, c.mean_duration)
        for c in cals.values()
    ))


# ---------------------------------------------------------------------------
# Shipped defaults
# ---------------------------------------------------------------------------


def data_path(name: str) -> Path:
    return Path(str(resources.files("transrisk") / "data" / name))


def default_scenario(with_maps: bool = True) -> Scenario:
    return load_scenario(
        data_path("scenario_sector_shocks.csv"),
        data_path("scenario_sovereign_shocks.csv"),
        cprs_file=data_path("cprs_map.csv") if with_maps else None,
        tec_tac_file=data_path("tec_tac_sample.csv") if with_maps else None,
    )


def default_calibration() -> dict[str, SectorCalibration]:
    return load_calibration(data_path("default_calibration.csv"))

