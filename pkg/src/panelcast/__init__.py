"""Counterfactual forecasting for panels with missing entries.

Factors are estimated by principal components of a pairwise-complete
second-moment matrix, their dynamics by a vector autoregression, and
forecasts come with asymptotic confidence intervals.
"""
from .errors import *  # noqa: F401,F403
from .panel import (
    OverlapIndex,
    OverlapStats,
    Panel,
    build_overlap_index,
    compute_overlap_stats,
    read_long_csv,
    read_wide_csv,
    write_wide_csv,
)
from .patterns import PatternConfig, generate_mask
from .factors import FactorModelFit, RankMethod, fit_factor_model
from .dynamics import ForecastResult, VarDynamics, fit_var, forecast, select_order
from .inference import OneFactorParams, confidence_interval, one_factor_variance
from .pipeline import FocusModel, FocusOptions, fit_focus
from .sim import DgpConfig, ExperimentGrid, generate_panel, run_experiment

__version__ = "0.1.0"
