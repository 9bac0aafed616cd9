"""Transition-risk stress testing of investment fund portfolios."""

from .aggregate import aggregate_funds, counterfactual_loss, sector_totals, tec_tac
from .calib import calibrate_segment, filliben_r2, fit_lognormal, quantile_of
from .ingest import default_calibration, default_scenario, load_universe, rating_to_cqs
from .model import AssetClass, InvestmentStyle, Scenario, Universe, validate_universe
from .risk import RiskOptions, assess, bond_sensitivities

__version__ = "0.1.0"

__all__ = [
    "AssetClass", "InvestmentStyle", "RiskOptions", "Scenario", "Universe", "aggregate_funds", "assess",
    "bond_sensitivities", "calibrate_segment", "counterfactual_loss", "default_calibration",
    "default_scenario", "filliben_r2", "fit_lognormal", "load_universe", "quantile_of", "rating_to_cqs",
    "sector_totals", "tec_tac", "validate_universe",
]
