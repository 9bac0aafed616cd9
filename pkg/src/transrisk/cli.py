"""Command-line entry point: ``transrisk calibrate|assess|report|synth``.

Exit codes: 0 ok, 1 validation or schema failure, 2 missing input or output
location.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .aggregate import aggregate_funds, characterization_table, compare_subset, sector_distribution, sector_totals
from .calib import calibrate_universe, merge_calibrations
from .ingest import (
    DomainError,
    SchemaError,
    UnknownRating,
    calibration_csv,
    counterparty_segment,
    default_calibration,
    default_scenario,
    load_calibration,
    load_counterparties,
    load_cprs_map,
    load_scenario,
    load_scenario_json,
    load_tec_tac,
    load_universe,
    write_atomic,
    write_universe,
)
from .model import validate_universe
from .report import (
    fund_results_csv,
    position_results_csv,
    read_fund_results,
    read_position_results,
    sort_results,
    summary_json,
    write_report_tables,
)
from .risk import RiskOptions, assess, lint_scenario

log = logging.getLogger("transrisk")

CONFIG_ENV = "TRANSRISK_CONFIG"
EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
MIN_SEGMENT_N = 5

# fields that change where or how fast a run happens but never what it computes
EXECUTION_ONLY = ("out_dir", "jobs")


class InputMissing(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    positions: str | None = None
    instruments: str | None = None
    counterparties: str | None = None
    funds: str | None = None
    sector_shocks: str | None = None
    sovereign_shocks: str | None = None
    scenario_json: str | None = None
    calibration: str | None = None
    tec_tac: str | None = None
    cprs_map: str | None = None
    out_dir: str = "out"
    strict_sign: bool = False
    empirical_cdf: bool = False
    aum_weighted_class_averages: bool = False
    fund_factor_two: bool = True
    fit_from_universe: bool = False
    min_n: int = 1
    seed: int = 7
    jobs: int = 1
    scale_factor: float | None = None
    labels: list[str] = field(default_factory=list)
    percentile: float = 1.0

    PATH_FIELDS = ("positions", "instruments", "counterparties", "funds", "sector_shocks",
                   "sovereign_shocks", "scenario_json", "calibration", "tec_tac", "cprs_map")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SchemaError(f"{path}: unknown config keys {unknown}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def echo(self) -> dict:
        """Config as recorded in the report: everything that affects results."""
        return {k: v for k, v in sorted(asdict(self).items()) if k not in EXECUTION_ONLY}

    def check_paths(self, required: Sequence[str] = ()) -> None:
        for name in required:
            if getattr(self, name) is None:
                raise InputMissing(f"--{name.replace('_', '-')} is required")
        for name in self.PATH_FIELDS:
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise InputMissing(f"{name}: no such file {value}")

    def risk_options(self) -> RiskOptions:
        return RiskOptions(
            strict_sign=self.strict_sign,
            empirical_cdf=self.empirical_cdf,
            fund_factor_two=self.fund_factor_two,
            aum_weighted_class_averages=self.aum_weighted_class_averages,
            jobs=self.jobs,
        )


def _base_config(args: argparse.Namespace) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).is_file():
            raise InputMissing(f"config file not found: {path}")
        return RunConfig.from_json(path)
    return RunConfig()


def _apply_args(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line values override the config file."""
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


# ---------------------------------------------------------------------------
# Loading helpers
# ---------------------------------------------------------------------------


def _scenario(cfg: RunConfig):
    if cfg.scenario_json:
        scenario = load_scenario_json(cfg.scenario_json)
    elif cfg.sector_shocks:
        scenario = load_scenario(cfg.sector_shocks, cfg.sovereign_shocks)
    else:
        scenario = default_scenario(with_maps=False)
    defaults = default_scenario(with_maps=True)
    cprs = load_cprs_map(cfg.cprs_map) if cfg.cprs_map else scenario.cprs_map or defaults.cprs_map
    table = load_tec_tac(cfg.tec_tac) if cfg.tec_tac else scenario.tec_tac_table or defaults.tec_tac_table
    return type(scenario)(scenario.name, scenario.equity_shock, scenario.spread_shock,
                          scenario.sovereign_curves, cprs, table)


def _fit(counterparties) -> dict:
    universe = {c.id: c for c in counterparties}
    samples: dict[str, list[float]] = {}
    for cp in counterparties:
        # own values only, so a parent's figure is not counted once per subsidiary
        if cp.carbon_intensity is not None:
            samples.setdefault(counterparty_segment(cp, universe), []).append(cp.carbon_intensity)
    return calibrate_universe(samples)


def _calibrations(cfg: RunConfig, counterparties) -> dict:
    base = load_calibration(cfg.calibration) if cfg.calibration else default_calibration()
    if cfg.fit_from_universe:
        return merge_calibrations(_fit(counterparties), base, cfg.min_n)
    return base


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_calibrate(cfg: RunConfig, output: str | None = None) -> int:
    cfg.check_paths(["counterparties"])
    counterparties = load_counterparties(cfg.counterparties)
    fitted = _fit(counterparties)
    defaults = load_calibration(cfg.calibration) if cfg.calibration else default_calibration()
    merged = {seg: merge_calibrations({seg: cal}, defaults)[seg] for seg, cal in fitted.items()}
    for seg, cal in merged.items():
        if cal.n < MIN_SEGMENT_N:
            log.warning("segment %s has only %d counterparties", seg, cal.n)
    target = Path(output) if output else Path(cfg.out_dir) / "calibration.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_atomic(target, calibration_csv(merged))
    print(f"{'segment':<10}{'n':>6}{'mean':>12}{'std':>12}{'ln mean':>10}{'ln std':>10}{'R2':>9}")
    for seg, c in merged.items():
        print(f"{seg:<10}{c.n:>6}{c.mean:>12.1f}{c.std:>12.1f}{c.ln_mean:>10.2f}{c.ln_std:>10.2f}{c.r2:>9.4f}")
    return EXIT_OK


def cmd_assess(cfg: RunConfig) -> int:
    cfg.check_paths(["positions", "instruments", "counterparties"])
    universe = load_universe(cfg.positions, cfg.instruments, cfg.counterparties, cfg.funds)
    report = validate_universe(universe.funds, universe.positions, universe.instruments, universe.counterparties)
    for f in report.findings:
        (log.error if f.fatal else log.warning)("%s: %s %s", f.kind, f.subject, f.detail)
    if not report.accepted:
        return EXIT_VALIDATION

    scenario = _scenario(cfg)
    calibrations = _calibrations(cfg, universe.counterparties.values())
    warnings = lint_scenario(scenario)
    for w in warnings:
        log.warning(w)
    warnings += [f"{f.kind}: {f.subject} {f.detail}".strip() for f in report.findings]

    result = assess(universe, scenario, calibrations, cfg.risk_options())
    positions = sort_results(result.results)
    funds = aggregate_funds(positions, universe.funds, scenario.cprs_map, scenario.tec_tac_table)
    totals = sector_totals(funds, positions, scenario.cprs_map, scenario.tec_tac_table, cfg.scale_factor)
    comparisons = [compare_subset(label, funds, positions) for label in cfg.labels]
    summary = summary_json(
        cfg.echo(),
        scenario.name,
        result.class_averages.as_dict(),
        totals,
        sector_distribution(funds),
        characterization_table(positions, cfg.percentile),
        comparisons,
        warnings,
        result.segment_averages.from_defaults,
    )

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "position_results.csv", position_results_csv(positions))
    write_atomic(out / "fund_results.csv", fund_results_csv(funds))
    write_atomic(out / "report.json", summary)
    write_atomic(out / "config.json", cfg.to_json())
    print(f"{len(funds)} funds, AuM {totals.aum:,.2f}, loss {totals.loss_fraction * 100:.2f}% "
          f"({totals.loss_eur:,.2f} EUR)")
    return EXIT_OK


def cmd_report(results_dir: str, labels: Sequence[str], percentile: float, bin_width: float,
               tec_tac: str | None = None, out_dir: str | None = None) -> int:
    src = Path(results_dir)
    pos_file, fund_file = src / "position_results.csv", src / "fund_results.csv"
    if not pos_file.is_file() or not fund_file.is_file():
        raise InputMissing(f"no assessment results in {src}")
    table = load_tec_tac(tec_tac) if tec_tac else default_scenario().tec_tac_table
    dest = Path(out_dir) if out_dir else src / "tables"
    dest.mkdir(parents=True, exist_ok=True)
    text = write_report_tables(dest, read_position_results(pos_file), read_fund_results(fund_file),
                               labels, percentile, bin_width, tec_tac_table=table)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(out_dir: str, n_funds: int, seed: int, positions_per_fund: tuple[int, int]) -> int:
    from .synthetic import generate_universe

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    universe = generate_universe(n_funds=n_funds, seed=seed, positions_per_fund=positions_per_fund)
    write_universe(universe, out)
    print(f"wrote {len(universe.positions)} positions in {len(universe.funds)} funds to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _flag(parser: argparse.ArgumentParser, name: str, help: str) -> None:
    parser.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                        default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transrisk", description="Transition-risk stress testing of fund portfolios.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def inputs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
        p.add_argument("--positions")
        p.add_argument("--instruments")
        p.add_argument("--counterparties")
        p.add_argument("--funds")
        p.add_argument("--calibration", help="calibration CSV overriding the shipped defaults")
        p.add_argument("--out-dir", dest="out_dir")

    cal = sub.add_parser("calibrate", help="fit sector carbon-intensity distributions")
    inputs(cal)
    cal.add_argument("--output", help="calibration CSV path (default: OUT_DIR/calibration.csv)")

    ass = sub.add_parser("assess", help="reprice a universe under a scenario")
    inputs(ass)
    ass.add_argument("--sector-shocks", dest="sector_shocks")
    ass.add_argument("--sovereign-shocks", dest="sovereign_shocks")
    ass.add_argument("--scenario-json", dest="scenario_json")
    ass.add_argument("--tec-tac", dest="tec_tac")
    ass.add_argument("--cprs-map", dest="cprs_map")
    _flag(ass, "strict-sign", "use the literal second-order sign convention for bonds")
    _flag(ass, "empirical-cdf", "rank carbon intensities against stored samples")
    _flag(ass, "aum-weighted-class-averages", "weight fund-vehicle class averages by market value")
    _flag(ass, "fund-factor-two", "apply the factor 2 to fund-vehicle quantiles")
    _flag(ass, "fit-from-universe", "refit sector distributions from the counterparty file")
    ass.add_argument("--min-n", dest="min_n", type=int, help="minimum firms for a refitted segment")
    ass.add_argument("--jobs", type=int)
    ass.add_argument("--seed", type=int)
    ass.add_argument("--scale-factor", dest="scale_factor", type=float,
                     help="multiply the sector loss by this factor for an extrapolated total")
    ass.add_argument("--label", dest="labels", action="append", help="fund label to compare (repeatable)")
    ass.add_argument("--percentile", type=float)

    rep = sub.add_parser("report", help="render tables from assessment results")
    rep.add_argument("results", help="directory written by assess")
    rep.add_argument("--label", dest="labels", action="append", default=[])
    rep.add_argument("--percentile", type=float, default=1.0)
    rep.add_argument("--bin-width", type=float, default=0.005, help="histogram bin width as a fraction")
    rep.add_argument("--tec-tac")
    rep.add_argument("--out-dir")

    syn = sub.add_parser("synth", help="write a seeded synthetic universe")
    syn.add_argument("out_dir")
    syn.add_argument("--funds", dest="n_funds", type=int, default=200)
    syn.add_argument("--seed", type=int, default=7)
    syn.add_argument("--positions-per-fund", nargs=2, type=int, default=(8, 30), metavar=("MIN", "MAX"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.results, args.labels, args.percentile, args.bin_width, args.tec_tac, args.out_dir)
        if args.command == "synth":
            return cmd_synth(args.out_dir, args.n_funds, args.seed, tuple(args.positions_per_fund))
        cfg = _apply_args(_base_config(args), args)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, args.output)
        return cmd_assess(cfg)
    except (InputMissing, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (SchemaError, DomainError, UnknownRating) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
