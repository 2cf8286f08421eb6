"""Coregionalized sparse Gaussian-process modelling of power spot price and
load, with base/peak forward hedge sizing and a monthly backtest harness.
"""

from .backtest import BacktestConfig, BacktestReport, emit_report, run_month, run_study
from .errors import (
    ConfigError,
    DataError,
    DegenerateStatsError,
    FitError,
    GapError,
    NumericalError,
    ParseError,
    PowerHedgeError,
    StateError,
)
from .gp import GpModel, TrainingSet, fit, posterior, sample_posterior_scenarios, select_inducing
from .hedge import (
    HedgeTerms,
    Position,
    ScenarioSet,
    average_load_positions,
    optimize_positions,
    realized_payoff,
)
from .kernels import CoregionalSpec, composite_kernel

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "ConfigError",
    "CoregionalSpec",
    "DataError",
    "DegenerateStatsError",
    "FitError",
    "GapError",
    "GpModel",
    "HedgeTerms",
    "NumericalError",
    "ParseError",
    "Position",
    "PowerHedgeError",
    "ScenarioSet",
    "StateError",
    "TrainingSet",
    "average_load_positions",
    "composite_kernel",
    "emit_report",
    "fit",
    "optimize_positions",
    "posterior",
    "realized_payoff",
    "run_month",
    "run_study",
    "sample_posterior_scenarios",
    "select_inducing",
]

__version__ = "0.1.0"
