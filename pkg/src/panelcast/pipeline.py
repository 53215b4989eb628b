"""End-to-end counterfactual forecasting: factors, dynamics, forecasts, intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .detrend import detrend_factors
from .dynamics import ForecastResult, fit_var, forecast_factors, select_order
from .errors import PanelcastError, ValidationError
from .factors import RankMethod, fit_factor_model
from .inference import confidence_interval, estimate_variance_pieces, variance_components
from .panel import compute_overlap_stats

__all__ = ["FocusOptions", "FocusModel", "fit_focus", "FORECAST_COLUMNS"]

FORECAST_COLUMNS = ["unit", "horizon", "point", "std_error", "ci_lower", "ci_upper", "flags"]


@dataclass(frozen=True)
class FocusOptions:
    """Settings for :func:`fit_focus`.

    ``max_order`` switches on AIC order selection over ``1..max_order``;
    otherwise the VAR order is ``order``.  Intervals are only produced for
    first-order dynamics.
    """

    rank_method: object = 1
    transpose: bool = False
    detrend: bool = False
    order: int = 1
    max_order: int = None
    alpha: float = 0.05
    hac: bool = False
    eig_method: str = "auto"
    detrend_folds: int = 10
    spline_grid: tuple = None
    n_knots: int = None

    def __post_init__(self):
        object.__setattr__(self, "rank_method", RankMethod.parse(self.rank_method))
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.order < 1 or (self.max_order is not None and self.max_order < 1):
            raise ValidationError("VAR orders must be at least 1")


@dataclass(frozen=True, eq=False)
class FocusModel:
    """A fitted pipeline.

    ``dyn_factors`` is the series the VAR was fitted to: the factors
    themselves, or their detrended residual.
    """

    panel: object
    options: FocusOptions
    fit: object
    dyn: object
    dyn_factors: np.ndarray
    detrend: object = None
    stats: object = None
    stats_error: str = None

    def factor_path(self, horizon):
        """Factor forecasts for steps ``1..horizon``, shape ``(horizon, r)``."""
        path = forecast_factors(self.dyn, self.dyn_factors, horizon)
        if self.detrend is not None:
            path = path + self.detrend.extrapolate(horizon)
        return path

    def point(self, unit, horizon):
        return float(self.fit.loadings[unit] @ self.factor_path(horizon)[-1])

    def _interval(self, unit, horizon, point, alpha):
        flags = []
        if self.dyn.order != 1:
            return None, ["NO_CI_ORDER"]
        if self.stats is None:
            return None, ["NO_CI_OVERLAP"]
        pieces = estimate_variance_pieces(
            self.panel, self.fit, self.dyn, self.stats, unit,
            hac=self.options.hac, factors=self.dyn_factors,
        )
        n, t = self.panel.shape
        comps = variance_components(
            pieces, horizon, self.dyn_factors[-1], self.fit.loadings[unit], self.dyn.A, n, t
        )
        if comps.clipped:
            flags.append("VARIANCE_CLIPPED")
        lo, hi = confidence_interval(point, comps.sigma_sq, n, t, alpha)
        se = math.sqrt(comps.sigma_sq) / math.sqrt(min(n, t))
        return (se, lo, hi), flags

    def forecast(self, unit, horizon, alpha=None):
        """Point forecast and interval for one unit; never raises for a
        degenerate unit (the result carries a ``DEGENERATE`` flag instead)."""
        alpha = self.options.alpha if alpha is None else alpha
        n, t = self.panel.shape
        delta = math.sqrt(min(n, t))
        base_flags = []
        if not self.dyn.stable:
            base_flags.append("UNSTABLE")
        if self.detrend is not None:
            base_flags.append("DETRENDED")
        if not self.fit.loading_ok[unit]:
            nan = float("nan")
            return ForecastResult(unit, horizon, nan, nan, nan, nan, delta,
                                  tuple(["DEGENERATE"] + base_flags))
        point = self.point(unit, horizon)
        ci, flags = self._interval(unit, horizon, point, alpha)
        nan = float("nan")
        se, lo, hi = ci if ci is not None else (nan, nan, nan)
        return ForecastResult(unit, horizon, point, se, lo, hi, delta, tuple(base_flags + flags))

    def forecast_table(self, horizons=(1,), alpha=None, units=None):
        units = range(self.panel.n_units) if units is None else units
        rows = []
        for h in horizons:
            for i in units:
                res = self.forecast(i, h, alpha)
                rows.append([res.unit, res.horizon, res.point, res.std_error,
                             res.ci_lower, res.ci_upper, "|".join(res.flags)])
        return pd.DataFrame(rows, columns=FORECAST_COLUMNS)


def fit_focus(panel, options=None):
    """Fit factors, (optionally) detrend them, and fit the factor VAR."""
    options = FocusOptions() if options is None else options
    fit = fit_factor_model(panel, options.rank_method, options.transpose, options.eig_method)
    trend = None
    series = fit.factors
    if options.detrend:
        grid = None if options.spline_grid is None else np.asarray(options.spline_grid)
        trend = detrend_factors(fit.factors, folds=options.detrend_folds, grid=grid,
                                n_knots=options.n_knots)
        series = trend.residual
    order = options.order
    if options.max_order is not None:
        order = select_order(series, options.max_order)
    dyn = fit_var(series, order)
    stats, stats_error = None, None
    if order == 1:
        try:
            stats = compute_overlap_stats(panel)
        except PanelcastError as exc:
            stats_error = str(exc)
    return FocusModel(panel, options, fit, dyn, series, trend, stats, stats_error)
