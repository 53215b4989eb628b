"""Penalised-spline trend removal for factor series.

Trends are cubic B-splines on equally spaced knots with a second-order
difference penalty on the coefficients (P-splines).  Because the penalty
vanishes on linear coefficient sequences, straight lines are never shrunk,
and the trend is continued beyond the sample along its end-point tangent.
The penalty is chosen by forward-chaining block cross-validation: each fold
is predicted from a fit on all earlier folds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import SingularSystem, TooShort, ValidationError

__all__ = [
    "SplineFit",
    "DetrendResult",
    "penalty_grid",
    "fit_penalized_spline",
    "cv_penalty_scores",
    "tune_penalty_blockcv",
    "detrend_factors",
]

DEGREE = 3


def penalty_grid(n_points=25, low=1e-4, high=1e4):
    """Log-spaced relative penalties; multiplied by a data-scale normaliser
    inside :func:`fit_penalized_spline`."""
    return np.logspace(np.log10(low), np.log10(high), n_points)


def _default_knots(n):
    return math.ceil(n / 4)


def _basis(n, n_knots):
    """Design matrix on ``x = 0..n-1`` with ``n_knots`` interior knots and
    uniformly extended boundary knots, plus the knot vector."""
    dx = (n - 1) / (n_knots + 1)
    knots = dx * np.arange(-DEGREE, n_knots + 2 + DEGREE)
    x = np.arange(n, dtype=float)
    design = BSpline.design_matrix(x, knots, DEGREE).toarray()
    return design, knots


@dataclass(frozen=True, eq=False)
class SplineFit:
    """A fitted trend.

    ``penalty`` is the relative penalty (grid units); ``cv_scores`` maps each
    candidate penalty to its mean forward-chained squared error when the
    penalty was tuned, and is empty otherwise.
    """

    fitted: np.ndarray
    residuals: np.ndarray
    penalty: float
    basis_dim: int
    knots: np.ndarray
    coef: np.ndarray
    cv_scores: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.fitted.shape[0]

    def end_slope(self):
        """Derivative of the trend at the last sample point."""
        spline = BSpline(self.knots, self.coef, DEGREE, extrapolate=True)
        return float(spline.derivative()(self.n - 1))

    def extrapolate(self, horizon):
        """Trend values at ``n-1+1, ..., n-1+horizon`` by linear continuation."""
        steps = np.arange(1, horizon + 1)
        return self.fitted[-1] + self.end_slope() * steps


def fit_penalized_spline(series, penalty, n_knots=None):
    """Penalised least squares ``||y - B c||^2 + lam ||D2 c||^2``.

    ``penalty`` is relative: the absolute weight is
    ``penalty * trace(B'B) / trace(D2'D2)`` so that one grid works for any
    sample length.
    """
    y = np.asarray(series, dtype=float)
    n = y.shape[0]
    if y.ndim != 1 or n < 4:
        raise ValidationError("series must be 1-D with at least 4 points")
    if penalty < 0:
        raise ValidationError("penalty must be nonnegative")
    n_knots = _default_knots(n) if n_knots is None else int(n_knots)
    design, knots = _basis(n, n_knots)
    nb = design.shape[1]
    diff2 = np.diff(np.eye(nb), 2, axis=0)
    btb = design.T @ design
    dtd = diff2.T @ diff2
    lam = penalty * np.trace(btb) / np.trace(dtd)
    lhs = btb + lam * dtd
    if np.linalg.cond(lhs) > 1e13:
        raise SingularSystem("spline normal equations are singular")
    coef = np.linalg.solve(lhs, design.T @ y)
    fitted = design @ coef
    return SplineFit(
        fitted=fitted,
        residuals=y - fitted,
        penalty=float(penalty),
        basis_dim=nb,
        knots=knots,
        coef=coef,
    )


def _fold_bounds(n, folds, block):
    block = math.ceil(math.sqrt(n)) if block is None else int(block)
    n_blocks = math.ceil(n / block)
    if n < 2 * folds or n_blocks < folds:
        raise TooShort(
            f"T={n} gives {n_blocks} blocks of size {block}; need at least {folds} blocks"
        )
    starts = np.arange(n_blocks) * block
    groups = np.array_split(np.arange(n_blocks), folds)
    return [(int(starts[g[0]]), int(min(starts[g[-1]] + block, n))) for g in groups]


def cv_penalty_scores(series, grid=None, folds=10, block=None, n_knots=None):
    """Mean forward-chained squared error for each relative penalty.

    Time is cut into contiguous blocks of ``ceil(sqrt(T))`` points, grouped
    chronologically into ``folds`` folds.  Fold ``k >= 2`` is predicted by
    linearly continuing a spline fitted on folds ``1..k-1``.
    """
    y = np.asarray(series, dtype=float)
    grid = penalty_grid() if grid is None else np.asarray(grid, dtype=float)
    bounds = _fold_bounds(y.shape[0], folds, block)
    scores = np.zeros(grid.shape[0])
    used = 0
    for start, stop in bounds[1:]:
        if start < 4:
            continue
        train, test = y[:start], y[start:stop]
        knots = None if n_knots is None else max(1, round(n_knots * start / y.shape[0]))
        for j, pen in enumerate(grid):
            fit = fit_penalized_spline(train, pen, knots)
            pred = fit.extrapolate(stop - start)
            scores[j] += np.mean((test - pred) ** 2)
        used += 1
    if used == 0:
        raise TooShort("no fold has enough training data")
    return dict(zip(grid.tolist(), (scores / used).tolist()))


def tune_penalty_blockcv(series, folds=10, block=None, grid=None, n_knots=None):
    """Relative penalty minimising the forward-chained CV error (smallest on ties)."""
    scores = cv_penalty_scores(series, grid, folds, block, n_knots)
    keys = list(scores)
    return keys[int(np.argmin([scores[k] for k in keys]))]


@dataclass(frozen=True, eq=False)
class DetrendResult:
    trend: np.ndarray
    residual: np.ndarray
    fits: list

    def extrapolate(self, horizon):
        """Trend forecasts, shape ``(horizon, r)``."""
        return np.column_stack([f.extrapolate(horizon) for f in self.fits])


def detrend_factors(factors, folds=10, block=None, grid=None, n_knots=None):
    """Split each factor column into a tuned spline trend and a residual."""
    f = np.atleast_2d(np.asarray(factors, dtype=float).T).T
    fits = []
    for col in f.T:
        scores = cv_penalty_scores(col, grid, folds, block, n_knots)
        keys = list(scores)
        best = keys[int(np.argmin([scores[k] for k in keys]))]
        fit = fit_penalized_spline(col, best, n_knots)
        fits.append(
            SplineFit(fit.fitted, fit.residuals, fit.penalty, fit.basis_dim,
                      fit.knots, fit.coef, scores)
        )
    trend = np.column_stack([fit.fitted for fit in fits])
    residual = f - trend
    return DetrendResult(trend=trend, residual=residual, fits=fits)
