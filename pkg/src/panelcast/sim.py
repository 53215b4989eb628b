"""Synthetic panels, baseline forecasters, forecast metrics and the Monte Carlo runner.

The one-factor designs follow a common recipe: loadings ``N(0, 0.5^2)``,
noise ``N(0, 0.1^2)``, and a factor that is the sum of an optional quadratic
trend ``2 t^2 / T^2`` and a stationary ARMA component started 500 steps
before the first recorded time.

=========  ==========================================  =============  ============
kind       stochastic part                             trend          pattern
=========  ==========================================  =============  ============
dgp1       AR(1), phi = 0.5, eta sd 0.5                none           MCAR(0.7)
dgp2       as dgp1                                     quadratic      simultaneous
dgp3       AR(0.5, -0.4, 0.2) + MA(0.5), eta sd 0.7    quadratic      MCAR(0.7)
custom     VAR(1) with ``var_coef`` (any ``r``)        optional       MCAR(0.7)
=========  ==========================================  =============  ============
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import NoPositiveActuals, PanelcastError, TooFewSamples, UnstableDgp, ValidationError
from .panel import Panel
from .patterns import PatternConfig, generate_mask
from .pipeline import FocusOptions, fit_focus

__all__ = [
    "DgpConfig",
    "GroundTruth",
    "TrialResult",
    "ExperimentGrid",
    "ExperimentResult",
    "dgp_config",
    "generate_panel",
    "baseline_forecast",
    "wilcoxon_one_sided",
    "msrpe",
    "msfe",
    "decay_slope",
    "run_trial",
    "run_experiment",
    "coverage_study",
    "METHODS",
]

KINDS = ("dgp1", "dgp2", "dgp3", "custom")
BASELINES = ("persistence", "mean", "static_factor")
METHODS = ("focus", "focus_detrend") + BASELINES

_DEFAULTS = {
    "dgp1": dict(ar_coefficients=(0.5,), ma_coefficients=(), eta_sd=0.5, trend=False,
                 pattern=PatternConfig("mcar", p=0.7)),
    "dgp2": dict(ar_coefficients=(0.5,), ma_coefficients=(), eta_sd=0.5, trend=True,
                 pattern=PatternConfig("simultaneous")),
    "dgp3": dict(ar_coefficients=(0.5, -0.4, 0.2), ma_coefficients=(0.5,), eta_sd=0.7,
                 trend=True, pattern=PatternConfig("mcar", p=0.7)),
    "custom": dict(ar_coefficients=(), ma_coefficients=(), eta_sd=0.5, trend=False,
                   pattern=PatternConfig("mcar", p=0.7)),
}


@dataclass(frozen=True)
class DgpConfig:
    """Full description of a synthetic panel.

    Fields left as ``None`` take the defaults of ``kind`` (see the module
    table).  For ``kind="custom"`` the factor is ``r``-dimensional with
    ``F_t = var_coef @ F_{t-1} + eta_t``, ``eta_t ~ N(0, eta_sd^2 I)``.
    """

    kind: str = "dgp1"
    n_units: int = 64
    n_times: int = 128
    horizon: int = 1
    loading_sd: float = 0.5
    noise_sd: float = 0.1
    ar_coefficients: tuple = None
    ma_coefficients: tuple = None
    eta_sd: float = None
    trend: bool = None
    pattern: PatternConfig = None
    var_coef: np.ndarray = None
    seed: int = 0
    burn_in: int = 500

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise ValidationError(f"unknown DGP kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        for name, value in _DEFAULTS[kind].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        object.__setattr__(self, "ar_coefficients", tuple(float(a) for a in self.ar_coefficients))
        object.__setattr__(self, "ma_coefficients", tuple(float(m) for m in self.ma_coefficients))
        if min(self.loading_sd, self.noise_sd, self.eta_sd) < 0:
            raise ValidationError("standard deviations must be nonnegative")
        if self.n_units < 1 or self.n_times < 2 or self.horizon < 1 or self.burn_in < 0:
            raise ValidationError("need n_units >= 1, n_times >= 2, horizon >= 1, burn_in >= 0")
        if kind == "custom":
            if self.var_coef is None:
                raise ValidationError("custom DGP needs var_coef")
            coef = np.atleast_2d(np.asarray(self.var_coef, dtype=float))
            object.__setattr__(self, "var_coef", coef)
        if self.spectral_radius() >= 1.0:
            raise UnstableDgp(f"stochastic part has spectral radius {self.spectral_radius():.4f}")

    @property
    def n_factors(self):
        return self.var_coef.shape[0] if self.kind == "custom" else 1

    def transition(self):
        """State-space form ``s_t = G s_{t-1} + R eta_t`` with ``F_t = s_t[:r]``.

        For ARMA the state is ``(x_t, ..., x_{t-p+1}, eta_t, ..., eta_{t-q+1})``.
        """
        if self.kind == "custom":
            r = self.n_factors
            return self.var_coef.copy(), np.eye(r)
        ar, ma = self.ar_coefficients, self.ma_coefficients
        p, q = len(ar), len(ma)
        dim = max(p, 1) + q
        g = np.zeros((dim, dim))
        g[0, :p] = ar
        g[0, max(p, 1):] = ma
        for k in range(1, p):
            g[k, k - 1] = 1.0
        for k in range(1, q):
            g[max(p, 1) + k, max(p, 1) + k - 1] = 1.0
        r_vec = np.zeros((dim, 1))
        r_vec[0, 0] = 1.0
        if q:
            r_vec[max(p, 1), 0] = 1.0
        return g, r_vec

    def spectral_radius(self):
        g, _ = self.transition()
        return float(np.max(np.abs(np.linalg.eigvals(g)))) if g.size else 0.0


def dgp_config(kind, **overrides):
    return DgpConfig(kind=kind, **overrides)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Simulation truth.

    ``targets[i, h-1]`` is ``Lambda_i' (trend(T+h) + E[x_{T+h} | past])``,
    and ``factor_forecast[h-1]`` the bracketed factor forecast.
    """

    factors: np.ndarray
    loadings: np.ndarray
    trend: np.ndarray
    stochastic: np.ndarray
    factor_forecast: np.ndarray
    targets: np.ndarray


def _trend(times, n_times):
    return 2.0 * np.asarray(times, dtype=float) ** 2 / n_times**2


def generate_panel(config):
    """Draw ``(Panel, GroundTruth)`` for ``config``; deterministic in ``config.seed``."""
    load_seed, eta_seed, noise_seed, mask_seed = np.random.SeedSequence(config.seed).spawn(4)
    n, t_len, r = config.n_units, config.n_times, config.n_factors
    g, r_mat = config.transition()
    loadings = np.random.default_rng(load_seed).normal(0.0, config.loading_sd, size=(n, r))
    total = config.burn_in + t_len
    # newest-first draws: panels of different lengths from one seed are
    # nested (a shorter panel is the recent window of a longer one)
    eta = np.random.default_rng(eta_seed).normal(0.0, config.eta_sd, size=(total, r_mat.shape[1]))[::-1]
    state = np.zeros(g.shape[0])
    states = np.empty((total, g.shape[0]))
    for step in range(total):
        state = g @ state + r_mat @ eta[step]
        states[step] = state
    states = states[config.burn_in:]
    stochastic = states[:, :r]
    times = np.arange(1, t_len + 1)
    trend = np.zeros((t_len, r))
    if config.trend:
        trend[:, 0] = _trend(times, t_len)
    factors = trend + stochastic
    noise = np.random.default_rng(noise_seed).normal(0.0, config.noise_sd, size=(t_len, n))[::-1].T
    values = loadings @ factors.T + noise

    fut = np.empty((config.horizon, r))
    state = states[-1]
    for h in range(config.horizon):
        state = g @ state  # future innovations have mean zero
        fut[h] = state[:r]
        if config.trend:
            fut[h, 0] += _trend(t_len + h + 1, t_len)
    targets = loadings @ fut.T

    pattern = replace(config.pattern, seed=int(mask_seed.generate_state(1, np.uint64)[0]))
    mask = generate_mask(pattern, n, t_len, aux=loadings[:, 0])
    panel = Panel(values, mask)
    return panel, GroundTruth(factors, loadings, trend, stochastic, fut, targets)


def baseline_forecast(panel, fit, kind):
    """Naive per-unit forecasts from a factor fit (horizon independent).

    ``persistence`` is ``Lambda_i' F_T``, ``mean`` is 0 and
    ``static_factor`` is ``Lambda_i'`` times the factor sample mean.
    """
    if kind == "persistence":
        out = fit.loadings @ fit.factors[-1]
    elif kind == "mean":
        out = np.zeros(panel.n_units)
    elif kind == "static_factor":
        out = fit.loadings @ fit.factors.mean(axis=0)
    else:
        raise ValidationError(f"unknown baseline {kind!r}")
    out = np.asarray(out, dtype=float)
    if kind != "mean":
        out = np.where(fit.loading_ok, out, np.nan)
    return out


def msfe(forecasts, targets):
    err = (np.asarray(forecasts, float) - np.asarray(targets, float)) ** 2
    return float(np.mean(err))


def msrpe(forecasts, actuals):
    """Mean squared relative error over units with a positive actual."""
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(actuals, dtype=float)
    keep = y > 0
    if not keep.any():
        raise NoPositiveActuals("no unit has a positive actual")
    return float(np.mean((f[keep] - y[keep]) ** 2 / y[keep] ** 2))


def _signed_rank_exact_cdf(ranks2, stat2):
    """``P(W+ <= stat)`` under the null, by counting sign assignments.

    Works on doubled ranks so tied (half-integer) ranks stay integral.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return float(counts[: int(stat2) + 1].sum() / counts.sum())


def wilcoxon_one_sided(diffs, exact_max=25):
    """One-sided signed-rank p-value for the alternative "diffs tend to be negative".

    Zero differences are dropped; ties share average ranks.  The null
    distribution is enumerated exactly for ``n <= exact_max`` and otherwise
    approximated by a continuity-corrected normal with tie correction.
    """
    d = np.asarray(diffs, dtype=float).ravel()
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise TooFewSamples(f"need at least 5 nonzero differences, got {n}")
    abs_d = np.abs(d)
    order = np.argsort(abs_d, kind="mergesort")
    sorted_abs = abs_d[order]
    ranks = np.empty(n)
    start = 0
    tie_term = 0.0
    while start < n:
        stop = start
        while stop + 1 < n and sorted_abs[stop + 1] == sorted_abs[start]:
            stop += 1
        ranks[order[start:stop + 1]] = 0.5 * (start + stop) + 1.0
        size = stop - start + 1
        tie_term += size**3 - size
        start = stop + 1
    w_plus = ranks[d > 0].sum()
    if n <= exact_max:
        ranks2 = np.rint(2 * ranks).astype(int)
        return _signed_rank_exact_cdf(ranks2, round(2 * w_plus))
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    return float(norm.cdf((w_plus - mean + 0.5) / math.sqrt(var)))


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Forecast quality of one method on one simulated panel.

    ``coverage_hits`` is empty for methods without intervals.
    """

    method: str
    msfe: float
    per_unit_errors: np.ndarray
    truth: np.ndarray
    coverage_hits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    error: str = ""

    @property
    def failed(self):
        return bool(self.error)


def _focus_trial(panel, truth, options, horizon, units):
    model = fit_focus(panel, options)
    points = np.empty(len(units))
    hits = np.zeros(len(units), dtype=bool)
    for k, i in enumerate(units):
        res = model.forecast(i, horizon)
        points[k] = res.point
        hits[k] = res.ci_lower <= truth[k] <= res.ci_upper
    return points, hits, model


def run_trial(dgp, methods=("focus", "persistence", "mean"), options=None, eval_units=32):
    """Simulate one panel and score every method on its first ``eval_units`` units."""
    options = FocusOptions() if options is None else options
    panel, gt = generate_panel(dgp)
    units = list(range(min(eval_units, dgp.n_units)))
    truth = gt.targets[units, dgp.horizon - 1]
    results = []
    base_fit = None
    for method in methods:
        try:
            hits = np.zeros(0, dtype=bool)
            if method in ("focus", "focus_detrend"):
                opts = replace(options, detrend=method == "focus_detrend")
                points, hits, model = _focus_trial(panel, truth, opts, dgp.horizon, units)
                if method == "focus":
                    base_fit = model.fit
            elif method in BASELINES:
                if base_fit is None:
                    base_fit = fit_focus(panel, replace(options, detrend=False)).fit
                points = baseline_forecast(panel, base_fit, method)[units]
            else:
                raise ValidationError(f"unknown method {method!r}")
            errors = (points - truth) ** 2
            if not np.isfinite(errors).all():
                raise ValidationError("non-finite forecast for an evaluated unit")
            results.append(TrialResult(method, float(errors.mean()), errors, truth, hits))
        except (PanelcastError, np.linalg.LinAlgError) as exc:
            nan = np.full(len(units), np.nan)
            results.append(TrialResult(method, float("nan"), nan, truth,
                                       error=f"{type(exc).__name__}: {exc}"))
    return results


@dataclass(frozen=True)
class ExperimentGrid:
    """Cells are ``kinds x t_values``; each cell runs ``trials`` seeded trials.

    Trial seeds are derived from ``(seed, kind, trial)``: every method sees
    the same panels, trial ``k`` uses nested panels across ``T`` (common
    random numbers), and the table does not depend on ``workers``.
    """

    t_values: tuple = (32, 64, 128, 256)
    kinds: tuple = ("dgp1",)
    trials: int = 30
    n_units: int = 64
    horizon: int = 1
    eval_units: int = 32
    seed: int = 0
    dgp_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.t_values) < 4:
            raise ValidationError("every T must be at least 4")
        if self.trials < 1 or self.n_units < 1 or self.horizon < 1:
            raise ValidationError("trials, n_units and horizon must be positive")
        for kind in self.kinds:
            if kind.lower() not in KINDS:
                raise ValidationError(f"unknown DGP kind {kind!r}")

    def trial_seed(self, kind, trial):
        ss = np.random.SeedSequence([self.seed, KINDS.index(kind.lower()), trial])
        return int(ss.generate_state(1, np.uint64)[0])


TABLE_COLUMNS = ["kind", "n_units", "n_times", "trial", "seed", "method", "msfe",
                 "coverage", "failed", "error"]


def _trial_rows(args):
    grid, kind, t_len, trial, methods, options = args
    seed = grid.trial_seed(kind, trial)
    dgp = DgpConfig(kind=kind, n_units=grid.n_units, n_times=t_len, horizon=grid.horizon,
                    seed=seed, **grid.dgp_overrides)
    rows = []
    for res in run_trial(dgp, methods, options, grid.eval_units):
        cov = float(res.coverage_hits.mean()) if res.coverage_hits.size else float("nan")
        rows.append([kind, grid.n_units, t_len, trial, seed, res.method, res.msfe,
                     cov, res.failed, res.error])
    return rows


def decay_slope(t_values, mean_msfe):
    """Least-squares slope of ``log(mean MSFE)`` on ``log T``."""
    x = np.log(np.asarray(t_values, dtype=float))
    y = np.log(np.asarray(mean_msfe, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """``table`` is tidy (one row per cell x trial x method); the other
    frames summarise it."""

    table: pd.DataFrame
    summary: pd.DataFrame
    slopes: pd.DataFrame
    wilcoxon: pd.DataFrame


def _summaries(table, reference):
    ok = table[~table["failed"]]
    summary = (
        ok.groupby(["kind", "n_times", "method"], sort=True)
        .agg(mean_msfe=("msfe", "mean"), coverage=("coverage", "mean"), n_ok=("msfe", "size"))
        .reset_index()
    )
    slopes = []
    for (kind, method), sub in summary.groupby(["kind", "method"], sort=True):
        slope = decay_slope(sub["n_times"], sub["mean_msfe"]) if len(sub) > 1 else float("nan")
        slopes.append([kind, method, slope])
    slopes = pd.DataFrame(slopes, columns=["kind", "method", "slope"])
    tests = []
    wide = table.pivot_table(index=["kind", "n_times", "trial"], columns="method",
                             values="msfe", aggfunc="first")
    if reference in wide.columns:
        for (kind, t_len), sub in wide.groupby(level=[0, 1], sort=True):
            for other in sorted(c for c in sub.columns if c != reference):
                d = (sub[reference] - sub[other]).dropna().to_numpy()
                try:
                    p, flag = wilcoxon_one_sided(d), ""
                except TooFewSamples as exc:
                    p, flag = float("nan"), f"degenerate: {exc}"
                tests.append([kind, t_len, reference, other, int(np.sum(d != 0)), p, flag])
    wilcoxon = pd.DataFrame(tests, columns=["kind", "n_times", "method", "baseline",
                                            "n_nonzero", "p_value", "flag"])
    return summary, slopes, wilcoxon


def run_experiment(grid, methods=("focus", "persistence", "mean"), options=None,
                   workers=1, reference="focus"):
    """Run every cell of ``grid``; failures are recorded, not raised.

    ``reference`` is the method whose per-trial MSFE is compared with every
    other method by :func:`wilcoxon_one_sided` (differences
    ``reference - other``, so small p means ``reference`` is better).
    """
    options = FocusOptions() if options is None else options
    tasks = [
        (grid, kind, t_len, trial, tuple(methods), options)
        for kind in grid.kinds
        for t_len in grid.t_values
        for trial in range(grid.trials)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_trial_rows, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        chunks = [_trial_rows(task) for task in tasks]
    table = pd.DataFrame([row for chunk in chunks for row in chunk], columns=TABLE_COLUMNS)
    summary, slopes, wilcoxon = _summaries(table, reference)
    return ExperimentResult(table, summary, slopes, wilcoxon)


def coverage_study(trials=500, n_units=200, n_times=200, p=0.7, horizon=1, unit=0,
                   alpha=0.05, seed=0, options=None, **dgp_overrides):
    """Empirical coverage of the interval for one unit on MCAR one-factor panels.

    Returns a frame with one row per trial (``point``, ``lower``, ``upper``,
    ``truth``, ``hit``).
    """
    options = FocusOptions(alpha=alpha) if options is None else options
    pattern = PatternConfig("mcar", p=p)
    rows = []
    for trial in range(trials):
        s = int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0])
        dgp = DgpConfig("dgp1", n_units=n_units, n_times=n_times, horizon=horizon,
                        pattern=pattern, seed=s, **dgp_overrides)
        panel, gt = generate_panel(dgp)
        res = fit_focus(panel, options).forecast(unit, horizon)
        truth = gt.targets[unit, horizon - 1]
        rows.append([trial, res.point, res.ci_lower, res.ci_upper, truth,
                     bool(res.ci_lower <= truth <= res.ci_upper)])
    return pd.DataFrame(rows, columns=["trial", "point", "lower", "upper", "truth", "hit"])
