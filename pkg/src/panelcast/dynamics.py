"""Vector autoregression on estimated factors and h-step forecasting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateUnit, SingularGram, ValidationError

__all__ = [
    "VarDynamics",
    "fit_var",
    "select_order",
    "aic_values",
    "companion_matrix",
    "forecast_factors",
    "forecast",
    "matrix_power_norms",
    "matrix_power_log_norms",
    "power_norm_burn_in",
    "fit_cross_slot_map",
    "slot_indices",
    "ForecastResult",
]

GRAM_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class VarDynamics:
    """Fitted VAR(p) without intercept: ``F_t = sum_k coef[k] @ F_{t-k-1} + eta_t``.

    Attributes
    ----------
    coef : ndarray, shape (p, r, r)
    innovation_cov : ndarray, shape (r, r)
        Residual covariance with divisor ``n_obs``.
    order : int
    spectral_radius : float
        Largest eigenvalue modulus of the companion matrix.
    n_obs : int
        Number of regression targets (``T - p`` for a plain fit).
    """

    coef: np.ndarray
    innovation_cov: np.ndarray
    order: int
    spectral_radius: float
    n_obs: int

    @property
    def dim(self):
        return self.coef.shape[1]

    @property
    def stable(self):
        return self.spectral_radius < 1.0

    @property
    def A(self):
        """First-lag coefficient matrix (the whole model when ``order == 1``)."""
        return self.coef[0]

    def companion(self):
        return companion_matrix(self.coef)

    def to_dict(self):
        return {
            "order": self.order,
            "dim": self.dim,
            "n_obs": self.n_obs,
            "spectral_radius": self.spectral_radius,
            "stable": bool(self.stable),
            "coef": self.coef.tolist(),
            "innovation_cov": self.innovation_cov.tolist(),
        }


def companion_matrix(coef):
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 2:
        coef = coef[None]
    p, r, _ = coef.shape
    comp = np.zeros((r * p, r * p))
    comp[:r, :] = np.hstack(list(coef))
    if p > 1:
        comp[r:, :-r] = np.eye(r * (p - 1))
    return comp


def _lagged_design(factors, order, first):
    t_len = factors.shape[0]
    y = factors[first:]
    x = np.hstack([factors[first - k - 1:t_len - k - 1] for k in range(order)])
    return y, x


def _ols(factors, order, first):
    y, x = _lagged_design(factors, order, first)
    gram = x.T @ x
    if not np.isfinite(gram).all() or np.linalg.cond(gram) > GRAM_COND_LIMIT:
        raise SingularGram("lagged-factor Gram matrix is numerically singular")
    beta = np.linalg.solve(gram, x.T @ y)
    resid = y - x @ beta
    sigma = resid.T @ resid / y.shape[0]
    return beta, 0.5 * (sigma + sigma.T), y.shape[0]


def _to_dynamics(beta, sigma, order, r, n_obs):
    coef = np.stack([beta[k * r:(k + 1) * r].T for k in range(order)])
    rho = float(np.max(np.abs(np.linalg.eigvals(companion_matrix(coef)))))
    return VarDynamics(coef, sigma, order, rho, n_obs)


def fit_var(factors, order=1):
    """Least-squares VAR(``order``) fit with no intercept.

    For ``order == 1`` this is
    ``A = (sum F_{t+1} F_t') (sum F_t F_t')^{-1}``.
    """
    factors = np.atleast_2d(np.asarray(factors, dtype=float).T).T
    t_len, r = factors.shape
    if order < 1:
        raise ValidationError("VAR order must be at least 1")
    if t_len <= order * r + 1:
        raise ValidationError(f"need T > order*r + 1 = {order * r + 1}, got T = {t_len}")
    beta, sigma, n_obs = _ols(factors, order, order)
    return _to_dynamics(beta, sigma, order, r, n_obs)


def aic_values(factors, max_order):
    """``log det Sigma_eta(p) + 2 p r^2 / n`` for ``p = 1..max_order``.

    Every candidate is fitted on the same targets ``t = max_order..T-1`` so
    the criteria are comparable; ``n`` is that common sample size.
    """
    factors = np.atleast_2d(np.asarray(factors, dtype=float).T).T
    t_len, r = factors.shape
    if max_order < 1:
        raise ValidationError("max_order must be at least 1")
    if max_order * r + 1 >= t_len:
        raise ValidationError(f"need max_order*r + 1 < T, got T = {t_len}")
    out = np.empty(max_order)
    for p in range(1, max_order + 1):
        _, sigma, n_obs = _ols(factors, p, max_order)
        sign, logdet = np.linalg.slogdet(sigma)
        out[p - 1] = (logdet if sign > 0 else -np.inf) + 2.0 * p * r * r / n_obs
    return out


def select_order(factors, max_order):
    """Order in ``1..max_order`` minimising AIC; ties go to the smaller order."""
    return int(np.argmin(aic_values(factors, max_order)) + 1)


def forecast_factors(dyn, history, horizon):
    """Iterate the VAR forward from the last ``order`` rows of ``history``.

    Returns an array of shape ``(horizon, r)`` whose row ``h-1`` is the
    ``h``-step point forecast.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    history = np.atleast_2d(np.asarray(history, dtype=float).T).T
    p, r = dyn.order, dyn.dim
    if dyn.order == 1:
        a = dyn.A
        out = np.empty((horizon, r))
        state = history[-1]
        for h in range(horizon):
            out[h] = np.linalg.matrix_power(a, h + 1) @ state
        return out
    state = history[-p:][::-1].ravel()  # newest lag first
    comp = dyn.companion()
    out = np.empty((horizon, r))
    for h in range(horizon):
        state = comp @ state
        out[h] = state[:r]
    return out


def forecast(fit, dyn, unit, horizon):
    """Point forecast ``loading_i' A^h F_T`` (companion recursion for p > 1)."""
    if not fit.loading_ok[unit]:
        raise DegenerateUnit(unit)
    path = forecast_factors(dyn, fit.factors, horizon)
    return float(fit.loadings[unit] @ path[-1])


def matrix_power_log_norms(a, n_max):
    """``log ||A^n||`` for ``n = 1..n_max`` (``-inf`` once a power vanishes).

    Powers are renormalised at every step, so the result stays accurate far
    beyond the range where ``||A^n||`` itself underflows.
    """
    if n_max < 1:
        raise ValidationError("n_max must be at least 1")
    a = np.asarray(a, dtype=float)
    out = np.full(n_max, -np.inf)
    power = np.eye(a.shape[0])
    log_scale = 0.0
    for n in range(n_max):
        power = power @ a
        size = np.linalg.norm(power, 2)
        if size == 0.0:
            break
        log_scale += np.log(size)
        out[n] = log_scale
        power /= size
    return out


def matrix_power_norms(a, n_max):
    """Spectral norms ``||A^n||`` for ``n = 1..n_max``."""
    return np.exp(matrix_power_log_norms(a, n_max))


def power_norm_burn_in(a, n_max):
    """Smallest ``N`` such that ``||A^n|| < ((1 + rho) / 2)^n`` for every
    ``N <= n <= n_max`` (1-based).  Returns ``n_max + 1`` if the bound fails
    at ``n_max``."""
    a = np.asarray(a, dtype=float)
    rho = float(np.max(np.abs(np.linalg.eigvals(a))))
    log_norms = matrix_power_log_norms(a, n_max)
    log_bound = np.arange(1, n_max + 1) * np.log((1.0 + rho) / 2.0)
    bad = np.flatnonzero(~(log_norms < log_bound))
    return 1 if bad.size == 0 else int(bad[-1] + 2)


def slot_indices(n_times, slot, period=5):
    """0-based times of a recurring slot: ``slot - 1 + period * j``.

    ``slot`` is 1-based within each period (e.g. decision slots 1..5 in a day).
    """
    if not 1 <= slot <= period:
        raise ValidationError(f"slot must be in [1, {period}]")
    return np.arange(slot - 1, n_times, period)


def fit_cross_slot_map(factors, source_slots, target_slots):
    """Least-squares map ``M`` with ``F[target_k] ~ M @ F[source_k]``.

    ``M = (F_tgt' F_src) (F_src' F_src)^{-1}``, indices 0-based.
    """
    factors = np.atleast_2d(np.asarray(factors, dtype=float).T).T
    src = np.asarray(source_slots, dtype=int)
    tgt = np.asarray(target_slots, dtype=int)
    t_len, r = factors.shape
    if src.shape != tgt.shape or src.ndim != 1:
        raise ValidationError("source and target index sequences must have equal length")
    if src.size < r + 1:
        raise ValidationError(f"need at least r + 1 = {r + 1} slot pairs, got {src.size}")
    if min(src.min(), tgt.min()) < 0 or max(src.max(), tgt.max()) >= t_len:
        raise ValidationError(f"slot indices must lie in [0, {t_len - 1}]")
    fs, ft = factors[src], factors[tgt]
    gram = fs.T @ fs
    if np.linalg.cond(gram) > GRAM_COND_LIMIT:
        raise SingularGram("source-slot Gram matrix is numerically singular")
    return np.linalg.solve(gram, fs.T @ ft).T


@dataclass(frozen=True)
class ForecastResult:
    """Point forecast of ``theta_{i,T+h}`` with its asymptotic interval.

    ``std_error`` is ``sigma_hat / delta_nt`` with ``delta_nt = min(sqrt N, sqrt T)``.
    """

    unit: int
    horizon: int
    point: float
    std_error: float
    ci_lower: float
    ci_upper: float
    delta_nt: float
    flags: tuple = ()
