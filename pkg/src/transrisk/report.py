"""Serialisation of assessment results and the report tables built from them."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .aggregate import (
    CLASS_LABELS,
    CharacterizationRow,
    DistributionStats,
    FundResult,
    SectorTotals,
    SubsetComparison,
    TecTac,
    characterization_table,
    compare_subset,
    histogram,
    sector_distribution,
    sector_totals,
    tec_tac,
    unique_instruments,
)
from .ingest import csv_text, write_atomic
from .model import AssetClass, InvestmentStyle, Multipliers, PositionResult

POSITION_RESULT_COLUMNS = [
    "fund_id", "isin", "asset_class", "market_value", "loss_fraction", "loss_eur", "segment", "country",
    "nace", "carbon_intensity", "cqs", "duration", "volatility", "style", "ci_m", "vol_m", "cqs_m",
    "ci_backfilled", "vol_backfilled", "cqs_backfilled", "flags",
]

FUND_RESULT_COLUMNS = (
    ["fund_id", "labels", "aum", "loss_fraction", "loss_eur", "weighted_ci", "ci_coverage"]
    + [f"w_{cls.value}" for cls in AssetClass]
    + ["cprs_share", "tec", "tac", "eligible_share", "adj_tec", "adj_tac", "flags"]
)


def sort_results(results: Iterable[PositionResult]) -> list[PositionResult]:
    """Stable order by fund then ISIN, independent of evaluation order."""
    indexed = list(enumerate(results))
    indexed.sort(key=lambda item: (item[1].fund_id, item[1].isin, item[0]))
    return [r for _, r in indexed]


def position_results_csv(results: Iterable[PositionResult]) -> str:
    def row(r: PositionResult):
        m = r.multipliers
        return (r.fund_id, r.isin, r.asset_class, r.market_value, r.loss_fraction, r.loss_eur, r.segment,
                r.country, r.nace, r.carbon_intensity, r.cqs, r.duration, r.volatility, r.style,
                m.ci_m, m.vol_m, m.cqs_m, int(m.ci_backfilled), int(m.vol_backfilled), int(m.cqs_backfilled),
                ";".join(r.flags))
    return csv_text(POSITION_RESULT_COLUMNS, map(row, sort_results(results)))


def fund_results_csv(funds: Iterable[FundResult]) -> str:
    def row(f: FundResult):
        g = f.greenness
        return ([f.fund_id, ";".join(sorted(f.labels)), f.aum, f.loss_fraction, f.loss_eur, f.weighted_ci,
                 f.ci_coverage]
                + [f.class_weights.get(cls, 0.0) for cls in AssetClass]
                + [f.cprs_share, g.tec if g else None, g.tac if g else None, g.eligible_share if g else None,
                   g.adj_tec if g else None, g.adj_tac if g else None, ";".join(f.flags)])
    return csv_text(FUND_RESULT_COLUMNS, map(row, sorted(funds, key=lambda f: f.fund_id)))


def _opt_float(text: str) -> float | None:
    return float(text) if text != "" else None


def read_position_results(path) -> list[PositionResult]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cqs = row["cqs"]
            out.append(PositionResult(
                fund_id=row["fund_id"],
                isin=row["isin"],
                asset_class=AssetClass(row["asset_class"]),
                market_value=float(row["market_value"]),
                loss_fraction=float(row["loss_fraction"]),
                multipliers=Multipliers(
                    ci_m=float(row["ci_m"]) if row["ci_m"] else 1.0,
                    vol_m=_opt_float(row["vol_m"]),
                    cqs_m=_opt_float(row["cqs_m"]),
                    ci_backfilled=row["ci_backfilled"] == "1",
                    vol_backfilled=row["vol_backfilled"] == "1",
                    cqs_backfilled=row["cqs_backfilled"] == "1",
                ),
                segment=row["segment"] or None,
                country=row["country"] or None,
                nace=row["nace"] or None,
                carbon_intensity=_opt_float(row["carbon_intensity"]),
                cqs=int(cqs) if cqs else None,
                duration=_opt_float(row["duration"]),
                volatility=_opt_float(row["volatility"]),
                style=InvestmentStyle(row["style"]) if row["style"] else None,
                flags=tuple(x for x in row["flags"].split(";") if x),
            ))
    return out


def read_fund_results(path) -> list[FundResult]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            tec = _opt_float(row["tec"])
            greenness = None
            if tec is not None:
                greenness = TecTac(tec, float(row["tac"]), float(row["eligible_share"]),
                                   _opt_float(row["adj_tec"]), _opt_float(row["adj_tac"]))
            out.append(FundResult(
                fund_id=row["fund_id"],
                aum=float(row["aum"]),
                loss_fraction=float(row["loss_fraction"]),
                loss_eur=float(row["loss_eur"]),
                weighted_ci=_opt_float(row["weighted_ci"]),
                ci_coverage=float(row["ci_coverage"]),
                class_weights={cls: float(row[f"w_{cls.value}"]) for cls in AssetClass},
                labels=frozenset(x for x in row["labels"].split(";") if x),
                cprs_share=_opt_float(row["cprs_share"]),
                greenness=greenness,
                flags=tuple(x for x in row["flags"].split(";") if x),
            ))
    return out


# ---------------------------------------------------------------------------
# JSON summary
# ---------------------------------------------------------------------------


def _clean(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {(k.value if isinstance(k, AssetClass) else k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (AssetClass, InvestmentStyle)):
        return value.value
    if isinstance(value, frozenset):
        return sorted(value)
    return value


def sector_json(totals: SectorTotals) -> dict:
    out = asdict(totals)
    b = totals.breakdown
    if b is not None:
        out["breakdown"] = {
            "shares": b.shares, "losses": b.losses, "carbon_intensity": b.carbon_intensity,
            "total_loss": b.total_loss, "total_ci": b.total_ci, "aum": b.aum,
        }
    return _clean(out)


def summary_json(
    config: Mapping[str, Any],
    scenario_name: str,
    class_averages: Mapping[str, float],
    totals: SectorTotals,
    distribution: DistributionStats | None,
    characterization: Sequence[CharacterizationRow],
    comparisons: Sequence[SubsetComparison] = (),
    warnings: Sequence[str] = (),
    segment_average_fallbacks: Iterable[str] = (),
) -> str:
    doc = {
        "config": dict(config),
        "scenario": scenario_name,
        "class_averages": dict(class_averages),
        "sector": sector_json(totals),
        "distribution": _clean(asdict(distribution)) if distribution else None,
        "characterization": [_clean(asdict(r)) for r in characterization],
        "subsets": [_clean(comparison_json(c)) for c in comparisons],
        "segment_average_fallbacks": sorted(segment_average_fallbacks),
        "warnings": list(warnings),
    }
    return json.dumps(doc, indent=2) + "\n"


def comparison_json(c: SubsetComparison) -> dict:
    def breakdown(b):
        if b is None:
            return None
        return {"shares": b.shares, "losses": b.losses, "carbon_intensity": b.carbon_intensity,
                "total_loss": b.total_loss, "total_ci": b.total_ci, "aum": b.aum}
    return {
        "label": c.label, "n_funds": c.n_funds, "subset": breakdown(c.subset), "universe": breakdown(c.universe),
        "counterfactual": c.counterfactual, "subset_worst_1": c.subset_worst_1, "subset_worst_5": c.subset_worst_5,
        "universe_worst_1": c.universe_worst_1, "universe_worst_5": c.universe_worst_5,
        "subset_worst_1_ci": c.subset_worst_1_ci, "universe_worst_1_ci": c.universe_worst_1_ci,
    }


# ---------------------------------------------------------------------------
# Human-readable tables
# ---------------------------------------------------------------------------


def pct(x: float | None) -> str:
    return "-" if x is None else f"{100.0 * x:.2f}"


def num(x: float | None, digits: int = 2) -> str:
    return "-" if x is None else f"{x:,.{digits}f}"


CHARACTERIZATION_HEADER = ["asset_class", "n", "mtm_loss_pct", "carbon_intensity", "segments", "cqs",
                           "duration", "volatility"]


def characterization_rows(rows: Sequence[CharacterizationRow]) -> list[list[str]]:
    return [[r.label, str(r.count), pct(r.loss), num(r.carbon_intensity), "; ".join(r.modal) or "-",
             num(r.cqs), num(r.duration), num(r.volatility)] for r in rows]


def comparison_rows(c: SubsetComparison) -> list[list[str]]:
    header_classes = list(CLASS_LABELS)
    rows = []
    for cls in header_classes:
        s = c.subset
        rows.append([CLASS_LABELS[cls],
                     pct(s.shares[cls]) if s else "-", pct(s.losses[cls]) if s else "-",
                     num(s.carbon_intensity[cls]) if s else "-",
                     pct(c.universe.shares[cls]), pct(c.universe.losses[cls]), num(c.universe.carbon_intensity[cls])])
    s = c.subset
    rows.append(["Entire portfolio", "100.00" if s else "-", pct(s.total_loss) if s else "-",
                 num(s.total_ci) if s else "-", "100.00",
                 f"{pct(c.universe.total_loss)} / {pct(c.counterfactual)}", num(c.universe.total_ci)])
    rows.append(["Worst 1% funds", "-", pct(c.subset_worst_1), num(c.subset_worst_1_ci), "-",
                 pct(c.universe_worst_1), num(c.universe_worst_1_ci)])
    return rows


COMPARISON_HEADER = ["asset_class", "subset_share_pct", "subset_loss_pct", "subset_ci", "universe_share_pct",
                     "universe_loss_pct", "universe_ci"]


def greenness_rows(totals: SectorTotals, results_by_label: Mapping[str, Sequence[PositionResult]],
                   table) -> list[list[str]]:
    rows = []
    if totals.greenness is not None:
        g = totals.greenness
        rows.append(["all funds", pct(g.tec), pct(g.tac), pct(g.eligible_share), pct(g.adj_tec), pct(g.adj_tac)])
    for label, results in results_by_label.items():
        if table and results:
            g = tec_tac(results, table)
            rows.append([label, pct(g.tec), pct(g.tac), pct(g.eligible_share), pct(g.adj_tec), pct(g.adj_tac)])
    return rows


GREENNESS_HEADER = ["holder", "tec_pct", "tac_pct", "eligible_pct", "adj_tec_pct", "adj_tac_pct"]


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def write_report_tables(
    out_dir,
    results: Sequence[PositionResult],
    funds: Sequence[FundResult],
    labels: Sequence[str] = (),
    percentile: float = 1.0,
    bin_width: float = 0.005,
    lo: float = -0.25,
    hi: float = 0.0,
    tec_tac_table=None,
) -> str:
    """Write the report CSVs into ``out_dir`` and return the rendered text."""
    out_dir = Path(out_dir)
    text = []

    char = characterization_table(results, percentile)
    write_atomic(out_dir / "characterization.csv", csv_text(CHARACTERIZATION_HEADER, characterization_rows(char)))
    text.append("Worst and best instruments by asset class")
    text.append(render_table(CHARACTERIZATION_HEADER, characterization_rows(char)))

    dist = sector_distribution(funds)
    dist_rows = []
    if dist is not None:
        dist_rows = [[k, f"{v:.6f}" if isinstance(v, float) else str(v)] for k, v in asdict(dist).items()]
    write_atomic(out_dir / "distribution.csv", csv_text(["statistic", "value"], dist_rows))
    text.append("\nFund loss distribution")
    text.append(render_table(["statistic", "value"], dist_rows) if dist_rows else "(no funds)")

    fund_hist = histogram([f.loss_fraction for f in funds], lo, hi, bin_width)
    write_atomic(out_dir / "histogram_funds.csv", csv_text(["bin_lo", "bin_hi", "count"], fund_hist))
    instruments = unique_instruments(results)
    for cls, name in CLASS_LABELS.items():
        losses = [r.loss_fraction for r in instruments if r.asset_class is cls]
        rows = histogram(losses, -1.0, 0.0 if cls is not AssetClass.SOVEREIGN_BOND else 0.1, 0.01)
        write_atomic(out_dir / f"histogram_{cls.value}.csv", csv_text(["bin_lo", "bin_hi", "count"], rows))

    by_fund_label: dict[str, list[PositionResult]] = {}
    for label in labels:
        comparison = compare_subset(label, funds, results)
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)
        rows = comparison_rows(comparison)
        write_atomic(out_dir / f"comparison_{safe}.csv", csv_text(COMPARISON_HEADER, rows))
        text.append(f"\nSubset '{label}' vs all funds")
        if comparison.n_funds == 0:
            text.append(f"(no funds carry label '{label}')")
            continue
        text.append(render_table(COMPARISON_HEADER, rows))
        members = {f.fund_id for f in funds if label in f.labels}
        by_fund_label[label] = [r for r in results if r.fund_id in members]

    if tec_tac_table:
        totals = sector_totals(funds, results, tec_tac_table=tec_tac_table)
        rows = greenness_rows(totals, by_fund_label, tec_tac_table)
        write_atomic(out_dir / "greenness.csv", csv_text(GREENNESS_HEADER, rows))
        text.append("\nTaxonomy alignment and transition-risk exposure")
        text.append(render_table(GREENNESS_HEADER, rows))
    return "\n".join(text) + "\n"
