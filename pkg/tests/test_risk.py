import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transrisk.ingest import CISource
from transrisk.model import (
    FUND,
    OTHER,
    SOV,
    AssetClass,
    Counterparty,
    Fund,
    Instrument,
    InvestmentStyle,
    Position,
    Scenario,
    Universe,
)
from transrisk.risk import (
    ClassAverages,
    Exposure,
    RiskOptions,
    UnknownCountry,
    assess,
    bond_sensitivities,
    ci_multiplier,
    class_averages,
    interpolate_tenor,
    lint_scenario,
    reprice_cash,
    reprice_corporate_bond,
    reprice_equity,
    reprice_fund_vehicle,
    reprice_sovereign,
    taylor_change,
)

POS_EQ = Position("F", "I", AssetClass.EQUITY, 100.0)
POS_CB = Position("F", "I", AssetClass.CORPORATE_BOND, 100.0)
POS_GB = Position("F", "I", AssetClass.SOVEREIGN_BOND, 100.0)
POS_FV = Position("F", "I", AssetClass.FUND_VEHICLE, 100.0)


def exposure(ci=None, segment="D35", country=None, source=None):
    if source is None:
        source = CISource.MISSING if ci is None else CISource.OWN
    return Exposure(ci, source, segment, country, None)


def norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class TestSensitivities:
    def test_reference_bond(self):
        s = bond_sensitivities(10, 0.05)
        assert s.duration == pytest.approx(7.8353, abs=1e-3)
        assert s.convexity == pytest.approx(99.773, abs=1e-3)

    @given(st.floats(0.01, 60), st.floats(-0.5, 0.5))
    def test_formula_and_cap(self, T, c):
        s = bond_sensitivities(T, c)
        d = T * (1 + c) ** (-T / 2)
        assert s.duration == pytest.approx(d, rel=1e-12)
        assert s.duration > 0
        assert s.convexity == pytest.approx(min(T * (T + 1) / (1 + c) ** 2, 40 * d), rel=1e-12)
        assert s.convexity <= 40 * s.duration * (1 + 1e-12)

    def test_zero_maturity(self):
        s = bond_sensitivities(0.0, 0.03)
        assert (s.duration, s.convexity) == (0.0, 0.0)


class TestCurves:
    CURVE = tuple(float(k * 10) for k in range(1, 11))

    @pytest.mark.parametrize("T,expected", [(0.2, 10.0), (1.0, 10.0), (2.5, 25.0), (9.99, 99.9), (10, 100.0), (30, 100.0)])
    def test_interpolation(self, T, expected):
        assert interpolate_tenor(self.CURVE, T) == pytest.approx(expected)

    def test_taylor(self):
        assert taylor_change(0.01, 5.0, 30.0) == pytest.approx(-0.05 + 0.0015)
        assert taylor_change(0.01, 5.0, 30.0, strict=True) == pytest.approx(-0.05 - 0.0015)
        assert taylor_change(-0.01, 5.0, 30.0) == pytest.approx(0.05 + 0.0015)

    def test_turning_point_holds_minimum(self):
        # D/C = 0.1; beyond it the quadratic would climb back towards zero
        assert taylor_change(0.1, 5.0, 50.0) == pytest.approx(-0.25)
        assert taylor_change(0.3, 5.0, 50.0) == pytest.approx(-0.25)
        assert taylor_change(0.3, 5.0, 50.0, strict=True) == pytest.approx(-1.5 - 2.25)

    @given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0.01, 60), st.floats(0.01, 2000))
    def test_monotone_in_widening(self, a, b, d, c):
        lo, hi = sorted((a, b))
        assert taylor_change(hi, d, c) <= taylor_change(lo, d, c) + 1e-15


class TestMultiplier:
    def test_missing_and_nonpositive(self, calibration):
        assert ci_multiplier(None, calibration["D35"]) == 1.0
        assert ci_multiplier(0.0, calibration["D35"]) == 0.0

    def test_twice_quantile(self, calibration):
        c = calibration["D35"]
        assert ci_multiplier(3696.8, c) == pytest.approx(2 * norm_cdf((math.log(3696.8) - c.ln_mean) / c.ln_std))


class TestEquity:
    def test_neutral_d35(self, scenario, calibration):
        r = reprice_equity(POS_EQ, Instrument("I", "C"), exposure(None), calibration["D35"], scenario, 29.8)
        assert r.loss_fraction == -0.23
        assert r.multipliers.ci_backfilled and r.multipliers.vol_backfilled
        assert "ci_missing" in r.flags and "volatility_missing" in r.flags

    def test_median_firm_sector_volatility(self, scenario, calibration):
        c = calibration["D35"]
        r = reprice_equity(POS_EQ, Instrument("I", "C", volatility=29.8), exposure(math.exp(c.ln_mean)), c,
                           scenario, 29.8)
        assert r.loss_fraction == pytest.approx(-0.23, abs=1e-12)

    def test_formula(self, scenario, calibration):
        c = calibration["C20"]
        ci, vol, sector_vol = 900.0, 55.0, 41.9
        r = reprice_equity(POS_EQ, Instrument("I", "C", volatility=vol), exposure(ci, "C20"), c, scenario, sector_vol)
        q = norm_cdf((math.log(ci) - c.ln_mean) / c.ln_std)
        assert r.loss_fraction == pytest.approx(2 * q * vol / sector_vol * scenario.equity_shock["C20"], rel=1e-12)
        assert r.loss_eur == pytest.approx(r.loss_fraction * 100.0)

    def test_floor(self, scenario, calibration):
        r = reprice_equity(POS_EQ, Instrument("I", "C", volatility=900.0), exposure(1e7), calibration["D35"],
                           scenario, 10.0)
        assert r.loss_fraction == -1.0

    def test_zero_ci_gives_no_loss(self, scenario, calibration):
        r = reprice_equity(POS_EQ, Instrument("I", "C"), exposure(0.0), calibration["D35"], scenario, 29.8)
        assert r.loss_fraction == 0.0
        assert "ci_nonpositive" in r.flags


class TestCorporate:
    def test_formula(self, scenario, calibration):
        c = calibration["D35"]
        inst = Instrument("I", "C", cqs=4, maturity_years=7.0, coupon=0.03)
        r = reprice_corporate_bond(POS_CB, inst, exposure(2000.0), c, scenario, 2.31, 7.04)
        q = norm_cdf((math.log(2000.0) - c.ln_mean) / c.ln_std)
        dcs = 2 * q * (4 / 2.31) * 284 * 1e-4
        d = 7 / 1.03 ** 3.5
        conv = min(7 * 8 / 1.03 ** 2, 40 * d)
        assert r.loss_fraction == pytest.approx(-dcs * d + 0.5 * dcs ** 2 * conv, rel=1e-12)
        assert r.duration == pytest.approx(d)

    def test_worked_case(self, scenario, calibration):
        # CQS at the sector mean, median issuer, D=5, C=30
        inst = Instrument("I", "C", cqs=3, duration=5.0, convexity=30.0)
        c = calibration["D35"]
        r = reprice_corporate_bond(POS_CB, inst, exposure(math.exp(c.ln_mean)), c, scenario, 3.0, 7.04)
        assert r.loss_fraction == pytest.approx(-0.1299, abs=1e-4)

    def test_missing_data_flags(self, scenario, calibration):
        r = reprice_corporate_bond(POS_CB, Instrument("I", "C"), exposure(None), calibration["D35"], scenario,
                                   2.31, 7.04)
        assert {"ci_missing", "cqs_missing", "duration_backfilled"} <= set(r.flags)
        assert r.duration == 7.04

    def test_missing_coupon(self, scenario, calibration):
        r = reprice_corporate_bond(POS_CB, Instrument("I", "C", cqs=2, maturity_years=5.0), exposure(100.0),
                                   calibration["D35"], scenario, 2.31, 7.04)
        assert "coupon_missing" in r.flags
        assert r.duration == 5.0

    def test_never_gains_under_widening(self, scenario, calibration):
        inst = Instrument("I", "C", cqs=6, duration=0.5, convexity=20.0)
        r = reprice_corporate_bond(POS_CB, inst, exposure(1e6), calibration["D35"], scenario, 1.0, 1.0)
        assert r.loss_fraction <= 0.0

    def test_floor(self, scenario, calibration):
        inst = Instrument("I", "C", cqs=6, duration=60.0, convexity=0.0)
        r = reprice_corporate_bond(POS_CB, inst, exposure(1e6), calibration["D35"], scenario, 1.0, 1.0,
                                   strict=True)
        assert r.loss_fraction == -1.0

    def test_strict_sign_is_larger_loss(self, scenario, calibration):
        inst = Instrument("I", "C", cqs=3, duration=5.0, convexity=30.0)
        args = (POS_CB, inst, exposure(500.0), calibration["D35"], scenario, 2.31, 7.04)
        assert reprice_corporate_bond(*args, strict=True).loss_fraction < reprice_corporate_bond(*args).loss_fraction


class TestSovereign:
    def test_spain_ten_year(self, scenario, calibration):
        inst = Instrument("I", "S", maturity_years=10.0, duration=8.0, convexity=80.0, country="ES")
        r = reprice_sovereign(POS_GB, inst, exposure(300.0), scenario, calibration[SOV], 1.92, 5.56)
        dy = 121.1e-4
        assert r.loss_fraction == pytest.approx(-8 * dy + 0.5 * 80 * dy * dy, rel=1e-12)
        assert r.loss_fraction * 100 == pytest.approx(-9.10, abs=0.01)

    @given(st.floats(0.01, 40), st.floats(0.01, 30))
    def test_poland_long_end_gains(self, duration, maturity):
        scenario, calibration = _defaults()
        inst = Instrument("I", "S", maturity_years=max(maturity, 10.0), duration=duration, country="PL")
        r = reprice_sovereign(POS_GB, inst, exposure(300.0), scenario, calibration[SOV], 1.92, 5.56)
        assert r.loss_fraction > 0

    def test_unlisted_country(self, scenario, calibration):
        c = calibration[SOV]
        inst = Instrument("I", "S", cqs=3, maturity_years=4.0, coupon=0.02, country="MX")
        r = reprice_sovereign(POS_GB, inst, exposure(800.0, country="MX"), scenario, c, 1.92, 5.56)
        q = norm_cdf((math.log(800.0) - c.ln_mean) / c.ln_std)
        avg = scenario.average_curve()
        dy = 2 * q * (3 / 1.92) * avg[3] * 1e-4
        s = bond_sensitivities(4.0, 0.02)
        assert r.loss_fraction == pytest.approx(-dy * s.duration + 0.5 * dy * dy * s.convexity, rel=1e-12)
        assert "country_unlisted" in r.flags

    def test_no_curves(self, calibration):
        s = Scenario("empty", {OTHER: 0.0}, {OTHER: 0.0}, {})
        inst = Instrument("I", "S", cqs=1, maturity_years=4.0, coupon=0.0, country="ES")
        r = reprice_sovereign(POS_GB, inst, exposure(50.0), s, calibration[SOV], 1.92, 5.56)
        assert r.loss_fraction == 0.0
        assert "no_sovereign_curves" in r.flags

    def test_country_from_counterparty(self, scenario, calibration):
        inst = Instrument("I", "S", maturity_years=10.0, duration=8.0, convexity=80.0)
        r = reprice_sovereign(POS_GB, inst, exposure(1.0, country="ES"), scenario, calibration[SOV], 1.92, 5.56)
        assert r.country == "ES"

    def test_missing_country(self, scenario, calibration):
        with pytest.raises(UnknownCountry):
            reprice_sovereign(POS_GB, Instrument("I", "S"), exposure(1.0), scenario, calibration[SOV], 1.92, 5.56)


class TestFundVehicle:
    AVERAGES = ClassAverages(-0.1271, -0.0561, -0.0477)

    def vehicle(self, style=InvestmentStyle.EQUITIES):
        return Instrument("I", "M", fund_style=style)

    def test_top_quantile_equity_style(self, calibration):
        r = reprice_fund_vehicle(POS_FV, self.vehicle(), exposure(1e12, FUND), calibration[FUND], self.AVERAGES)
        assert r.loss_fraction == pytest.approx(2 * (0.85 * -0.1271 + 0.05 * -0.0561 + 0.05 * -0.0477), rel=1e-9)
        half = reprice_fund_vehicle(POS_FV, self.vehicle(), exposure(1e12, FUND), calibration[FUND], self.AVERAGES,
                                    factor_two=False)
        assert half.loss_fraction == pytest.approx(r.loss_fraction / 2)

    def test_missing_ci_is_neutral(self, calibration):
        r = reprice_fund_vehicle(POS_FV, self.vehicle(InvestmentStyle.BONDS), exposure(None, FUND),
                                 calibration[FUND], self.AVERAGES)
        assert r.loss_fraction == pytest.approx(0.75 * -0.0561 + 0.20 * -0.0477)

    def test_missing_style(self, calibration):
        r = reprice_fund_vehicle(POS_FV, self.vehicle(None), exposure(None, FUND), calibration[FUND], self.AVERAGES)
        assert r.style is InvestmentStyle.OTHERS and "style_missing" in r.flags


def test_cash_and_unclassified():
    assert reprice_cash(Position("F", "c", AssetClass.CASH, 5.0)).loss_fraction == 0.0
    r = reprice_cash(Position("F", "u", AssetClass.UNCLASSIFIED, 5.0))
    assert r.loss_fraction == 0.0 and r.flags == ("unclassified",)


_CACHE = {}


def _defaults():
    if not _CACHE:
        from transrisk.ingest import default_calibration, default_scenario
        _CACHE["v"] = (default_scenario(), default_calibration())
    return _CACHE["v"]


def small_universe():
    cps = [
        Counterparty("U", "utility", 2500.0, "D35.11"),
        Counterparty("T", "tech", 20.0, "J62.01"),
        Counterparty("S", "sub", None, "C20.14", parent_id="U"),
        Counterparty("ES", "Spain", 300.0, None, "ES"),
        Counterparty("M", "manager", 150.0, FUND),
    ]
    insts = [
        Instrument("EQ-U", "U", volatility=35.0),
        Instrument("EQ-T", "T", volatility=25.0),
        Instrument("CB-S", "S", cqs=3, maturity_years=6.0, coupon=0.02),
        Instrument("GB-ES", "ES", cqs=2, maturity_years=10.0, coupon=0.01, country="ES"),
        Instrument("FV-M", "M", fund_style=InvestmentStyle.MIXED_EQUITIES),
    ]
    positions = [
        Position("F2", "FV-M", AssetClass.FUND_VEHICLE, 50.0),
        Position("F1", "EQ-U", AssetClass.EQUITY, 40.0),
        Position("F1", "CB-S", AssetClass.CORPORATE_BOND, 30.0),
        Position("F1", "GB-ES", AssetClass.SOVEREIGN_BOND, 20.0),
        Position("F1", "cash", AssetClass.CASH, 10.0),
        Position("F2", "EQ-T", AssetClass.EQUITY, 50.0),
    ]
    return Universe.build(positions, insts, cps, [Fund("F1", 100.0), Fund("F2", 100.0)])


class TestAssess:
    def test_input_order_and_two_phases(self, scenario, calibration):
        u = small_universe()
        a = assess(u, scenario, calibration)
        assert [r.isin for r in a.results] == [p.isin for p in u.positions]
        # the fund vehicle is priced from the phase-one class averages
        fv = a.results[0]
        w = InvestmentStyle.MIXED_EQUITIES.weights
        mixed = w.equity * a.class_averages.equity + w.corporate * a.class_averages.corporate \
            + w.sovereign * a.class_averages.sovereign
        assert fv.loss_fraction == pytest.approx(fv.multipliers.ci_m * mixed)
        eq = [r.loss_fraction for r in a.results if r.asset_class is AssetClass.EQUITY]
        assert a.class_averages.equity == pytest.approx(sum(eq) / len(eq))

    def test_parent_backfill_used(self, scenario, calibration):
        a = assess(small_universe(), scenario, calibration)
        cb = next(r for r in a.results if r.isin == "CB-S")
        assert cb.carbon_intensity == 2500.0 and "ci_from_parent" in cb.flags
        assert cb.segment == "C20"

    def test_jobs_do_not_change_results(self, scenario, calibration):
        u = small_universe()
        one = assess(u, scenario, calibration, RiskOptions(jobs=1))
        many = assess(u, scenario, calibration, RiskOptions(jobs=4))
        assert one.results == many.results

    def test_zero_scenario(self, scenario, calibration):
        a = assess(small_universe(), scenario.zeroed(), calibration)
        assert all(r.loss_fraction == 0.0 for r in a.results)
        assert all(math.copysign(1.0, r.loss_fraction) == 1.0 for r in a.results)

    def test_class_averages_aum_weighted(self, scenario, calibration):
        a = assess(small_universe(), scenario, calibration)
        eq = [r for r in a.results if r.asset_class is AssetClass.EQUITY]
        w = class_averages(a.results, aum_weighted=True)
        expected = sum(r.loss_fraction * r.market_value for r in eq) / sum(r.market_value for r in eq)
        assert w.equity == pytest.approx(expected)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1.0, 1e5), st.floats(1.0, 1e5))
    def test_loss_magnitude_monotone_in_ci(self, a, b):
        scenario, calibration = _defaults()
        lo, hi = sorted((a, b))
        c = calibration["D35"]

        def eq(ci):
            return reprice_equity(POS_EQ, Instrument("I", "C", volatility=30.0), exposure(ci), c, scenario,
                                  29.8).loss_fraction

        def cb(ci):
            inst = Instrument("I", "C", cqs=3, maturity_years=5.0, coupon=0.02)
            return reprice_corporate_bond(POS_CB, inst, exposure(ci), c, scenario, 2.31, 7.04).loss_fraction

        assert abs(eq(hi)) >= abs(eq(lo))
        assert abs(cb(hi)) >= abs(cb(lo)) - 1e-15


def test_lint_flags_extreme_shocks():
    s = Scenario("x", {OTHER: 0.0}, {OTHER: 600.0}, {"ES": (0.0,) * 9 + (700.0,)})
    warnings = lint_scenario(s)
    assert len(warnings) == 2
    assert lint_scenario(Scenario("y", {OTHER: 0.0}, {OTHER: 100.0}, {})) == []
