from __future__ import annotations

import pytest

from transrisk.ingest import default_calibration, default_scenario
from transrisk.model import AssetClass, Counterparty, Fund, Instrument, Position, Universe


@pytest.fixture(scope="session")
def calibration():
    return default_calibration()


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


def single_position_universe(asset_class, instrument, counterparty, mv=100.0, fund_id="F1", extra_cps=()):
    pos = Position(fund_id, instrument.isin, asset_class, mv)
    return Universe.build([pos], [instrument], [counterparty, *extra_cps], [Fund(fund_id, mv)])


def equity(isin="EQ1", cp="C1", vol=None):
    return Instrument(isin, cp, volatility=vol)


def company(cid="C1", ci=None, nace="D35.11", parent=None, ultimate=None):
    return Counterparty(cid, f"name {cid}", ci, nace, None, parent, ultimate)


__all__ = ["AssetClass", "single_position_universe", "equity", "company"]
