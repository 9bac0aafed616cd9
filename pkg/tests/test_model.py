import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from transrisk.model import (
    AUM_MISMATCH,
    CQS_RANGE,
    DANGLING_COUNTERPARTY,
    DANGLING_INSTRUMENT,
    FUND,
    NACE_BUCKETS,
    NEGATIVE_VALUE,
    OTHER,
    PARENT_CYCLE,
    SEGMENTS,
    SOV,
    STYLE_WEIGHTS,
    AssetClass,
    Counterparty,
    Fund,
    Instrument,
    InvestmentStyle,
    Position,
    PositionResult,
    Scenario,
    Universe,
    normalize_nace4,
    resolve_segment,
    validate_universe,
)


def _validate(u: Universe):
    return validate_universe(u.funds, u.positions, u.instruments, u.counterparties)


class TestStyleWeights:
    def test_rows_sum_to_one(self):
        for style, w in STYLE_WEIGHTS.items():
            assert math.isclose(w.total(), 1.0, abs_tol=1e-15), style

    def test_published_rows(self):
        w = STYLE_WEIGHTS[InvestmentStyle.EQUITIES]
        assert (w.equity, w.corporate, w.sovereign, w.cash) == (0.85, 0.05, 0.05, 0.05)
        w = STYLE_WEIGHTS[InvestmentStyle.MIXED_EQUITIES]
        assert (w.equity, w.corporate, w.sovereign, w.cash) == (0.65, 0.15, 0.15, 0.05)
        w = STYLE_WEIGHTS[InvestmentStyle.GOVERNMENT_DEBT]
        assert (w.equity, w.corporate, w.sovereign, w.cash) == (0.0, 0.20, 0.75, 0.05)
        w = STYLE_WEIGHTS[InvestmentStyle.BONDS]
        assert (w.equity, w.corporate, w.sovereign, w.cash) == (0.0, 0.75, 0.20, 0.05)
        assert STYLE_WEIGHTS[InvestmentStyle.OTHERS] == STYLE_WEIGHTS[InvestmentStyle.MIXED_BONDS]

    def test_every_style_has_weights(self):
        assert set(STYLE_WEIGHTS) == set(InvestmentStyle)

    def test_unknown_style_parses_to_others(self):
        assert InvestmentStyle.parse("hedge") is InvestmentStyle.OTHERS
        assert InvestmentStyle.parse(None) is InvestmentStyle.OTHERS
        assert InvestmentStyle.parse("mixed equities") is InvestmentStyle.MIXED_EQUITIES


class TestAssetClass:
    @pytest.mark.parametrize("text,expected", [
        ("Equity", AssetClass.EQUITY),
        ("corporate_bond", AssetClass.CORPORATE_BOND),
        ("Sovereign Bond", AssetClass.SOVEREIGN_BOND),
        ("fund", AssetClass.FUND_VEHICLE),
        ("cash", AssetClass.CASH),
        ("Unclassified", AssetClass.UNCLASSIFIED),
    ])
    def test_parse(self, text, expected):
        assert AssetClass.parse(text) is expected

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            AssetClass.parse("swap")


class TestSegments:
    def test_bucket_count(self):
        assert len(NACE_BUCKETS) == 23
        assert OTHER in NACE_BUCKETS
        assert SOV in SEGMENTS and FUND in SEGMENTS

    @pytest.mark.parametrize("code,bucket", [
        ("C20", "C20"),
        ("H52", "H52-H53"),
        ("B06.10", "B05-B09"),
        ("35.11", "D35"),
        ("D3511", "D35"),
        ("A02", "A02-A03"),
        ("C25", "C24-C25"),
        ("J62.01", OTHER),
        ("K64", OTHER),
        ("nonsense", OTHER),
        (None, OTHER),
        ("Sovereign debt", SOV),
        ("Other fund vehicles", FUND),
    ])
    def test_resolution(self, code, bucket):
        assert resolve_segment(code) == bucket

    def test_canonical_buckets_are_fixed_points(self):
        for seg in SEGMENTS:
            assert resolve_segment(seg) == seg

    @given(st.text(max_size=8))
    def test_idempotent(self, code):
        once = resolve_segment(code)
        assert resolve_segment(once) == once
        assert once in SEGMENTS

    @given(st.integers(min_value=1, max_value=99), st.integers(min_value=0, max_value=99))
    def test_every_numeric_code_resolves_to_one_bucket(self, division, sub):
        code = f"{division:02d}.{sub:02d}"
        assert resolve_segment(code) in NACE_BUCKETS

    def test_normalize_nace4(self):
        assert normalize_nace4("D35.11") == "35.11"
        assert normalize_nace4("35.1") == "35.1"
        assert normalize_nace4("C20") == "20"
        assert normalize_nace4("FUND") is None


class TestRecords:
    def test_negative_ci_rejected(self):
        with pytest.raises(ValueError):
            Counterparty("X", carbon_intensity=-1.0)

    def test_zero_ci_allowed(self):
        assert Counterparty("X", carbon_intensity=0.0).carbon_intensity == 0.0

    def test_instrument_ranges(self):
        with pytest.raises(ValueError):
            Instrument("I", "C", maturity_years=-1)
        with pytest.raises(ValueError):
            Instrument("I", "C", coupon=-1.0)
        with pytest.raises(ValueError):
            Instrument("I", "C", volatility=0.0)

    def test_loss_eur(self):
        r = PositionResult("F", "I", AssetClass.EQUITY, 250.0, -0.2)
        assert r.loss_eur == -50.0

    def test_universe_build_adds_missing_funds(self):
        u = Universe.build([Position("B", "x", AssetClass.CASH, 1.0), Position("A", "y", AssetClass.CASH, 2.0)])
        assert list(u.funds) == ["A", "B"]
        assert u.funds["A"].aum is None


class TestScenario:
    def test_requires_other_bucket(self):
        with pytest.raises(ValueError):
            Scenario("s", {"D35": -0.2}, {OTHER: 10.0}, {})

    def test_requires_ten_tenors(self):
        with pytest.raises(ValueError):
            Scenario("s", {OTHER: 0.0}, {OTHER: 0.0}, {"ES": (1.0,) * 9})

    def test_fallback_and_average(self):
        s = Scenario("s", {OTHER: -0.05}, {OTHER: 50.0}, {"A": (10.0,) * 10, "B": (30.0,) * 10})
        assert s.equity_for("D35") == -0.05
        assert s.spread_for("zzz") == 50.0
        assert s.average_curve() == (20.0,) * 10
        z = s.zeroed()
        assert set(z.equity_shock.values()) == {0.0}
        assert z.average_curve() == (0.0,) * 10

    def test_no_curves_average_is_none(self):
        assert Scenario("s", {OTHER: 0.0}, {OTHER: 0.0}, {}).average_curve() is None


class TestValidation:
    def test_empty_universe_accepted(self):
        report = validate_universe({}, [], {}, {})
        assert report.accepted and report.findings == ()

    def test_dangling_instrument(self):
        u = Universe.build([Position("F", "UNKNOWN", AssetClass.EQUITY, 10.0)])
        report = _validate(u)
        assert not report.accepted
        assert report.of_kind(DANGLING_INSTRUMENT)[0].subject == "F/UNKNOWN"

    def test_cash_needs_no_instrument(self):
        assert _validate(Universe.build([Position("F", "CASH", AssetClass.CASH, 10.0)])).accepted

    def test_self_parent_is_a_cycle(self):
        u = Universe.build([], [], [Counterparty("A", parent_id="A")])
        assert [f.subject for f in _validate(u).of_kind(PARENT_CYCLE)] == ["A"]

    def test_two_cycle(self):
        u = Universe.build([], [], [Counterparty("A", parent_id="B"), Counterparty("B", ultimate_parent_id="A"),
                                    Counterparty("C", parent_id="A")])
        cyc = sorted(f.subject for f in _validate(u).of_kind(PARENT_CYCLE))
        assert cyc == ["A", "B"]

    def test_dangling_counterparty_links(self):
        u = Universe.build([], [Instrument("I", "nobody")], [Counterparty("A", parent_id="ghost")])
        kinds = _validate(u).of_kind(DANGLING_COUNTERPARTY)
        assert {f.subject for f in kinds} == {"I", "A"}

    def test_cqs_range_and_negative_value(self):
        u = Universe.build(
            [Position("F", "I", AssetClass.CORPORATE_BOND, -5.0)],
            [Instrument("I", "A", cqs=7)],
            [Counterparty("A")],
        )
        report = _validate(u)
        assert report.of_kind(CQS_RANGE) and report.of_kind(NEGATIVE_VALUE)
        assert not report.accepted

    def test_aum_mismatch(self):
        u = Universe.build([Position("F", "C", AssetClass.CASH, 100.0)], funds=[Fund("F", 100.001)])
        assert _validate(u).of_kind(AUM_MISMATCH)
        u = Universe.build([Position("F", "C", AssetClass.CASH, 100.0)], funds=[Fund("F", 100.00000001)])
        assert not _validate(u).of_kind(AUM_MISMATCH)
