"""Acceptance checks, one test per criterion, each printing a single pass/fail line."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from transrisk.aggregate import adjusted, aggregate_funds, class_breakdown, counterfactual_loss, sector_totals, tec_tac
from transrisk.calib import filliben_medians, filliben_r2, fit_lognormal, lognormal_moments, quantile_of
from transrisk.cli import main
from transrisk.ingest import CISource, data_path, read_printed_calibration
from transrisk.model import FUND, AssetClass, Instrument, InvestmentStyle, Position, PositionResult, SectorCalibration
from transrisk.risk import (
    ClassAverages,
    Exposure,
    RiskOptions,
    assess,
    bond_sensitivities,
    reprice_corporate_bond,
    reprice_equity,
    reprice_fund_vehicle,
    reprice_sovereign,
)
from transrisk.synthetic import generate_universe


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def exposure(ci, segment="D35", country=None):
    return Exposure(ci, CISource.MISSING if ci is None else CISource.OWN, segment, country, None)


def test_01_calibration_table(verdict):
    start = time.perf_counter()
    rows = read_printed_calibration(data_path("default_calibration.csv"))
    misses = []
    for r in rows:
        mu, sigma = fit_lognormal(r["mean"], r["std"] ** 2)
        if abs(mu - r["ln_mean"]) > 0.01 or abs(sigma - r["ln_std"]) > 0.01:
            misses.append(f"{r['segment']} fitted ({mu:.4f}, {sigma:.4f}) vs printed ({r['ln_mean']}, {r['ln_std']})")
    elapsed = time.perf_counter() - start
    ok = len(rows) == 26 and not misses and elapsed < 1.0
    detail = f"{len(rows) - len(misses)}/{len(rows)} rows within 0.01 in {elapsed:.3f}s"
    if misses:
        detail += "; outside tolerance: " + "; ".join(misses)
    verdict(1, ok, detail)


def test_02_moment_round_trip(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for mu, sigma in zip(rng.uniform(-2, 10, 1000), rng.uniform(0, 3, 1000)):
        m, v = lognormal_moments(mu, sigma)
        mu2, sigma2 = fit_lognormal(m, v)
        worst = max(worst, abs(mu2 - mu) / max(abs(mu), 1e-300), abs(sigma2 - sigma) / max(sigma, 1e-300))
    verdict(2, worst <= 1e-10, f"1000 cases, worst relative error {worst:.2e}")


def test_03_filliben(verdict):
    draws = np.random.default_rng(3).lognormal(4.5, 1.3, 10_000)
    r2 = filliben_r2(draws)
    perfect = max(abs(filliben_r2(np.exp(stats.norm.ppf(filliben_medians(n)))) - 1.0) for n in (3, 50, 10_000))
    verdict(3, r2 > 0.99 and perfect <= 1e-12, f"R2 on 1e4 draws {r2:.5f}, perfect-fit deviation {perfect:.1e}")


def test_04_quantile_oracle(verdict):
    rng = np.random.default_rng(4)
    probes = np.linspace(-2.0, 2.0, 9)
    worst = 0.0
    for _ in range(20):
        mu, sigma = rng.uniform(0, 8), rng.uniform(0.2, 2.5)
        cal = SectorCalibration("X", 1, 1.0, 0.0, mu, sigma, 1.0)
        draws = np.sort(rng.lognormal(mu, sigma, 1_000_000))
        for z in probes:
            ci = math.exp(mu + z * sigma)
            empirical = np.searchsorted(draws, ci, side="right") / draws.size
            worst = max(worst, abs(quantile_of(ci, cal) - empirical))
    verdict(4, worst <= 0.005, f"20 calibrations x 9 probes, worst gap {worst:.5f}")


def test_05_repricing_golden(verdict, scenario, calibration):
    neutral = reprice_equity(Position("F", "I", AssetClass.EQUITY, 100.0), Instrument("I", "C"), exposure(None),
                             calibration["D35"], scenario, 29.8).loss_fraction
    spain = reprice_sovereign(Position("F", "I", AssetClass.SOVEREIGN_BOND, 100.0),
                              Instrument("I", "S", maturity_years=10.0, duration=8.0, convexity=80.0, country="ES"),
                              exposure(300.0), scenario, calibration["SOV"], 1.92, 5.56).loss_fraction
    poland_losses = []

    @settings(max_examples=300, deadline=None, database=None)
    @given(st.floats(1e-6, 60), st.floats(10, 50))
    def poland(d, t):
        inst = Instrument("I", "S", maturity_years=t, duration=d, country="PL")
        r = reprice_sovereign(Position("F", "I", AssetClass.SOVEREIGN_BOND, 1.0), inst, exposure(300.0), scenario,
                              calibration["SOV"], 1.92, 5.56)
        if r.loss_fraction <= 0:
            poland_losses.append((d, t))
        assert r.loss_fraction > 0

    poland()
    s = bond_sensitivities(10, 0.05)
    checks = {
        "i": neutral == -0.23,
        "ii": abs(spain * 100 + 9.10) <= 0.01,
        "iii": not poland_losses,
        "iv": abs(s.duration - 7.8353) <= 1e-3 and abs(s.convexity - 99.773) <= 1e-3,
    }
    detail = (f"neutral {neutral:.2%}, Spain {spain:.4%}, Poland gains for all sampled D, "
              f"sensitivities ({s.duration:.4f}, {s.convexity:.3f})")
    verdict(5, all(checks.values()), detail + f" {checks}")


def test_06_fund_vehicle_factor_two(verdict, calibration):
    averages = ClassAverages(-0.1271, -0.0561, -0.0477)
    pos = Position("F", "V", AssetClass.FUND_VEHICLE, 100.0)
    inst = Instrument("V", "M", fund_style=InvestmentStyle.EQUITIES)
    top = exposure(1e15, FUND)
    with_two = reprice_fund_vehicle(pos, inst, top, calibration[FUND], averages).loss_fraction
    without = reprice_fund_vehicle(pos, inst, top, calibration[FUND], averages, factor_two=False).loss_fraction
    ok = abs(with_two + 0.226) <= 0.005 and abs(without + 0.113) <= 0.0005 and with_two <= -0.2220 <= without
    verdict(6, ok, f"q->1 with factor two {with_two:.3%}, without {without:.3%}")


def test_07_tec_tac(verdict):
    direct = (adjusted(0.0437, 0.3388), adjusted(0.0378, 0.4798))
    # a 10000 EUR portfolio with 3388 eligible and the coefficient chosen so TEC is 4.37%
    rows = [PositionResult("F", "E", AssetClass.EQUITY, 3388.0, 0.0, nace="D35.11"),
            PositionResult("F", "G", AssetClass.SOVEREIGN_BOND, 6612.0, 0.0)]
    g = tec_tac(rows, {"35.11": (437.0 / 3388.0, 0.0)})
    ok = (abs(direct[0] - 0.1290) <= 2e-4 and abs(direct[1] - 0.0787) <= 2e-4
          and abs(g.adj_tec - 0.1290) <= 2e-4 and abs(g.tec - 0.0437) <= 1e-12)
    verdict(7, ok, f"adjusted {direct[0]:.4%} and {direct[1]:.4%}, portfolio route {g.adj_tec:.4%}")


def test_08_counterfactual_identity(verdict, scenario, calibration):
    a = assess(generate_universe(n_funds=40, seed=8), scenario, calibration)
    by_fund = {}
    for r in a.results:
        by_fund.setdefault(r.fund_id, []).append(r)
    worst = 0.0
    for rows in by_fund.values():
        b = class_breakdown(rows)
        worst = max(worst, abs(counterfactual_loss(b.losses, b.shares) - b.total_loss))
    u = class_breakdown(a.results)
    shifted = dict(u.shares)
    shifted[AssetClass.EQUITY], shifted[AssetClass.SOVEREIGN_BOND] = u.shares[AssetClass.SOVEREIGN_BOND], \
        u.shares[AssetClass.EQUITY]
    differs = counterfactual_loss(u.losses, shifted) != counterfactual_loss(u.losses, u.shares)
    verdict(8, worst <= 1e-12 and differs, f"{len(by_fund)} funds, worst identity gap {worst:.1e}, swap differs={differs}")


def test_09_determinism_and_scale(verdict, tmp_path, scenario, calibration):
    start = time.perf_counter()
    assert main(["synth", str(tmp_path / "in"), "--funds", "200", "--seed", "7"]) == 0
    outputs = []
    for jobs in (1, 8):
        out = tmp_path / f"jobs{jobs}"
        args = ["assess", "--jobs", str(jobs), "--out-dir", str(out)]
        for name in ("positions", "instruments", "counterparties", "funds"):
            args += [f"--{name}", str(tmp_path / "in" / f"{name}.csv")]
        assert main(args) == 0
        outputs.append({f: (out / f).read_bytes() for f in ("position_results.csv", "fund_results.csv", "report.json")})
    small = time.perf_counter() - start
    identical = outputs[0] == outputs[1]

    universe = generate_universe(n_funds=5300, seed=9)
    start = time.perf_counter()
    assess(universe, scenario, calibration, RiskOptions(jobs=4))
    large = time.perf_counter() - start
    ok = identical and small < 10.0 and len(universe.positions) >= 100_000 and large < 60.0
    verdict(9, ok, f"jobs 1 vs 8 identical={identical} in {small:.2f}s; "
                   f"{len(universe.positions)} positions assessed in {large:.2f}s")


def test_10_invariants(verdict, scenario, calibration):
    universe = generate_universe(n_funds=150, seed=10)
    zero = assess(universe, scenario.zeroed(), calibration)
    all_zero = all(r.loss_fraction == 0.0 for r in zero.results)

    a = assess(universe, scenario, calibration)
    floored = all(r.loss_fraction >= -1.0 for r in a.results
                  if r.asset_class in (AssetClass.EQUITY, AssetClass.CORPORATE_BOND, AssetClass.FUND_VEHICLE))
    funds = aggregate_funds(a.results, universe.funds)
    totals = sector_totals(funds, a.results)
    fund_sum = math.fsum(f.loss_eur for f in funds)
    reconcile = abs(fund_sum - totals.loss_eur) <= 1e-6 * abs(totals.loss_eur)

    violations = []
    eq_pos = Position("F", "I", AssetClass.EQUITY, 1.0)
    cb_pos = Position("F", "I", AssetClass.CORPORATE_BOND, 1.0)
    fv_pos = Position("F", "I", AssetClass.FUND_VEHICLE, 1.0)
    averages = ClassAverages(-0.1271, -0.0561, -0.0477)

    @settings(max_examples=1000, deadline=None, database=None)
    @given(st.sampled_from(sorted(set(calibration) - {"ALL"})), st.floats(1e-3, 1e6), st.floats(1.0, 100.0),
           st.integers(1, 6), st.floats(0.1, 30))
    def monotone(segment, ci, factor, cqs, maturity):
        c = calibration[segment]
        lo, hi = exposure(ci, segment), exposure(ci * factor, segment)
        eq = [reprice_equity(eq_pos, Instrument("I", "C", volatility=30.0), e, c, scenario, 30.0).loss_fraction
              for e in (lo, hi)]
        inst = Instrument("I", "C", cqs=cqs, maturity_years=maturity, coupon=0.03)
        cb = [reprice_corporate_bond(cb_pos, inst, e, c, scenario, 2.5, 5.0).loss_fraction for e in (lo, hi)]
        fv = [reprice_fund_vehicle(fv_pos, Instrument("I", "M", fund_style=InvestmentStyle.MIXED_EQUITIES),
                                   exposure(e.ci, FUND), calibration[FUND], averages).loss_fraction for e in (lo, hi)]
        bad = [name for name, (x, y) in (("equity", eq), ("corporate", cb), ("fund", fv)) if abs(y) < abs(x) - 1e-15]
        if bad and not violations:
            violations.append((bad, segment, ci, factor, cqs, maturity))
        assert not bad

    try:
        monotone()
    except AssertionError:
        pass
    ok = all_zero and floored and reconcile and not violations
    verdict(10, ok, f"zero shock all zero={all_zero}, floor held={floored}, 1000 monotonicity cases clean="
                    f"{not violations}{' ' + str(violations[0]) if violations else ''}, fund/sector EUR gap {abs(fund_sum - totals.loss_eur):.2e}")
