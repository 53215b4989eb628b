"""Asymptotic variance of the factor forecast and its confidence intervals.

The forecast error variance splits into a factor-estimation part (``xi^2``,
from estimating ``F_T`` and ``Lambda_i`` out of a partially observed panel)
and a dynamics part (``tau^2``, from estimating the VAR coefficient).  Both
are evaluated by plugging estimated moments into the population formulas.
Only first-order dynamics are covered.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import DegenerateUnit, UnsupportedOrder, ValidationError

__all__ = [
    "VariancePieces",
    "VarianceComponents",
    "OneFactorParams",
    "estimate_variance_pieces",
    "xi_squared",
    "tau_squared",
    "variance_components",
    "one_factor_variance",
    "confidence_interval",
    "newey_west_bandwidth",
    "long_run_covariance",
    "variance_pieces_frame",
]


def newey_west_bandwidth(n_times):
    return int(math.floor(4.0 * (n_times / 100.0) ** (2.0 / 9.0)))


def long_run_covariance(z, bandwidth):
    """Bartlett-kernel long-run covariance of the rows of ``z`` (no demeaning)."""
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    n = z.shape[0]
    out = z.T @ z / n
    for lag in range(1, bandwidth + 1):
        gamma = z[lag:].T @ z[:-lag] / n
        out += (1.0 - lag / (bandwidth + 1.0)) * (gamma + gamma.T)
    return out


@dataclass(frozen=True, eq=False)
class VariancePieces:
    """Moment estimates entering the forecast variance (all ``r x r`` unless noted).

    Attributes
    ----------
    sigma_eps_sq : float
        Idiosyncratic noise variance.
    sigma_lambda : ndarray
        Second moment of the loadings.
    sigma_f : ndarray
        Second moment of the factors.
    sigma_f_i : ndarray
        Second moment of the factors over the unit's observed times (``/T``).
    sigma_eta : ndarray
        Innovation covariance of the factor VAR.
    v_lambda : ndarray, shape (r*r, r*r)
        Covariance of ``vec(Lambda Lambda' - sigma_lambda)``.
    omega1, omega2, omega3 : float
        Missingness weights; all 1 for a fully observed panel.
    sigma_lambda_obs : ndarray, optional
        Replaces ``sigma_eps_sq * inv(sigma_f_i)`` (e.g. a HAC estimate).
    """

    sigma_eps_sq: float
    sigma_lambda: np.ndarray
    sigma_f: np.ndarray
    sigma_f_i: np.ndarray
    sigma_eta: np.ndarray
    v_lambda: np.ndarray
    omega1: float = 1.0
    omega2: float = 1.0
    omega3: float = 1.0
    sigma_lambda_obs: np.ndarray = None

    def derived(self, f_last, loading):
        """Observed-data and missingness covariance blocks for one unit.

        Returns a dict with ``F_obs``, ``F_miss``, ``Lambda_obs``,
        ``Lambda_miss`` and ``F_Lambda_cov`` (the last is a cross-covariance
        and need not be symmetric).
        """
        f_last = np.asarray(f_last, dtype=float).ravel()
        loading = np.asarray(loading, dtype=float).ravel()
        sl_inv = np.linalg.inv(np.atleast_2d(self.sigma_lambda))
        sf = np.atleast_2d(self.sigma_f)
        sfi = np.atleast_2d(self.sigma_f_i)
        sfi_inv = np.linalg.inv(sfi)
        v = np.atleast_2d(self.v_lambda)
        psi = np.kron(f_last[:, None], sf) @ np.linalg.inv(sf) @ sl_inv
        upsilon = np.kron(sfi, (sl_inv @ loading)[:, None]) @ sfi_inv
        lam_obs = (
            self.sigma_eps_sq * sfi_inv
            if self.sigma_lambda_obs is None
            else np.atleast_2d(self.sigma_lambda_obs)
        )
        return {
            "F_obs": self.sigma_eps_sq * sl_inv,
            "F_miss": psi.T @ v @ psi,
            "Lambda_obs": lam_obs,
            "Lambda_miss": upsilon.T @ v @ upsilon,
            "F_Lambda_cov": psi.T @ v @ upsilon,
        }

    def as_rows(self, f_last=None, loading=None):
        """Flat ``(name, value)`` rows for diagnostic dumps."""
        rows = [
            ("sigma_eps_sq", self.sigma_eps_sq),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("omega3", self.omega3),
        ]
        mats = {
            "sigma_lambda": self.sigma_lambda,
            "sigma_f": self.sigma_f,
            "sigma_f_i": self.sigma_f_i,
            "sigma_eta": self.sigma_eta,
            "v_lambda": self.v_lambda,
        }
        if f_last is not None and loading is not None:
            mats.update(self.derived(f_last, loading))
        for name, m in mats.items():
            rows.append((name, np.array2string(np.atleast_2d(m).ravel(), precision=10,
                                               separator=" ", max_line_width=10**6)))
        return rows


@dataclass(frozen=True, eq=False)
class VarianceComponents:
    """``sigma_sq = xi_sq + tau_sq``; negative plug-in totals are floored at 0
    and reported through ``clipped``."""

    xi_sq: float
    tau_sq: float
    sigma_sq: float
    pieces: VariancePieces
    clipped: bool = False
    derived: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OneFactorParams:
    """Population parameters of a one-factor model with AR(1) factor.

    ``sigma_f`` and ``sigma_eta`` are standard deviations; when one of them is
    omitted it is derived from ``sigma_f**2 = sigma_eta**2 / (1 - phi**2)``.
    ``lambda_kurt`` is ``E[(Lambda^2 / sigma_lambda^2 - 1)^2]`` (2 for
    Gaussian loadings).  ``p_obs`` is the MCAR observation probability.
    """

    phi: float
    sigma_eta: float = None
    sigma_f: float = None
    sigma_lambda: float = 1.0
    sigma_eps: float = 1.0
    p_obs: float = 1.0
    lambda_kurt: float = 2.0

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValidationError("|phi| must be < 1")
        if self.sigma_eta is None and self.sigma_f is None:
            raise ValidationError("give sigma_eta or sigma_f")
        scale = math.sqrt(1.0 - self.phi**2)
        if self.sigma_f is None:
            object.__setattr__(self, "sigma_f", self.sigma_eta / scale)
        if self.sigma_eta is None:
            object.__setattr__(self, "sigma_eta", self.sigma_f * scale)
        if not 0 < self.p_obs <= 1:
            raise ValidationError("p_obs must lie in (0, 1]")

    def pieces(self, pattern="mcar"):
        """Population :class:`VariancePieces` under MCAR or staggered adoption."""
        p = self.p_obs if pattern == "mcar" else 1.0
        one = np.ones((1, 1))
        sl2 = self.sigma_lambda**2
        return VariancePieces(
            sigma_eps_sq=self.sigma_eps**2,
            sigma_lambda=sl2 * one,
            sigma_f=self.sigma_f**2 * one,
            sigma_f_i=p * self.sigma_f**2 * one,
            sigma_eta=self.sigma_eta**2 * one,
            v_lambda=self.lambda_kurt * sl2**2 * one,
            omega1=1.0 / p,
            omega2=1.0,
            omega3=1.0,
        )


def _unit_moments(panel, fit, unit):
    w = panel.mask[unit].astype(float)
    f = fit.factors
    return (f * w[:, None]).T @ f / panel.n_times


def estimate_variance_pieces(panel, fit, dyn, stats, unit, hac=False, factors=None):
    """Plug-in moments for ``unit``.

    ``factors`` overrides ``fit.factors`` for the dynamics-related moments
    (used when the VAR is fitted to detrended factors).  With ``hac=True``
    the loading-side observed-data covariance is replaced by a Bartlett HAC
    estimate built from the unit's own residuals, with bandwidth
    ``floor(4 (T/100)^(2/9))``.
    """
    if dyn.order != 1:
        raise UnsupportedOrder(f"variance formulas need VAR order 1, got {dyn.order}")
    if not fit.loading_ok[unit]:
        raise DegenerateUnit(unit)
    ok = fit.loading_ok
    lam = fit.loadings[ok]
    n_ok, r = lam.shape
    resid = (panel.values - fit.fitted()) * panel.mask
    obs = panel.mask & ok[:, None]
    sigma_eps_sq = float(np.sum(resid[obs] ** 2) / max(obs.sum(), 1))
    sigma_lambda = lam.T @ lam / n_ok
    dev = np.einsum("ia,ib->iab", lam, lam) - sigma_lambda
    vecs = dev.reshape(n_ok, r * r)
    v_lambda = vecs.T @ vecs / n_ok
    f_dyn = fit.factors if factors is None else np.asarray(factors, dtype=float)
    sigma_f = f_dyn.T @ f_dyn / f_dyn.shape[0]
    w = panel.mask[unit].astype(float)
    sigma_f_i = (f_dyn * w[:, None]).T @ f_dyn / f_dyn.shape[0]
    lam_obs = None
    if hac:
        z = f_dyn * (w * resid[unit])[:, None]
        phi = long_run_covariance(z, newey_west_bandwidth(panel.n_times))
        sfi_inv = np.linalg.inv(sigma_f_i)
        lam_obs = sfi_inv @ phi @ sfi_inv
    return VariancePieces(
        sigma_eps_sq=sigma_eps_sq,
        sigma_lambda=sigma_lambda,
        sigma_f=sigma_f,
        sigma_f_i=sigma_f_i,
        sigma_eta=np.atleast_2d(dyn.innovation_cov),
        v_lambda=v_lambda,
        omega1=stats.omega1,
        omega2=stats.omega2,
        omega3=stats.omega3,
        sigma_lambda_obs=lam_obs,
    )


def xi_squared(pieces, horizon, f_last, loading, a, n_units, n_times):
    """Factor-estimation variance ``xi^2_{i,T,h}`` (scaled by ``delta_NT^2``)."""
    a = np.atleast_2d(a)
    loading = np.asarray(loading, dtype=float).ravel()
    f_last = np.asarray(f_last, dtype=float).ravel()
    ah = np.linalg.matrix_power(a, horizon)
    d = pieces.derived(f_last, loading)
    delta_sq = min(n_units, n_times)
    u = ah.T @ loading
    b = ah @ f_last
    w1, w2, w3 = pieces.omega1, pieces.omega2, pieces.omega3
    missing_part = (
        u @ (w1 * d["F_obs"] + (w1 - 1.0) * d["F_miss"]) @ u
        - 2.0 * (w2 - 1.0) * (b @ d["F_Lambda_cov"] @ u)
        + (w3 - 1.0) * (b @ d["Lambda_miss"] @ b)
    )
    return float(delta_sq / n_units * missing_part + delta_sq / n_times * (b @ d["Lambda_obs"] @ b))


def tau_squared(pieces, horizon, f_last, loading, a, n_units, n_times):
    """Dynamics variance ``tau^2_{i,T,h}``: the double sum over ``k, l < h`` of
    ``(Lambda' A^{h-1-k}' inv(Sigma_F) A^{h-1-l} Lambda) (F_T' A^k Sigma_eta A^l' F_T)``
    times ``delta_NT^2 / T``."""
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    a = np.atleast_2d(a)
    loading = np.asarray(loading, dtype=float).ravel()
    f_last = np.asarray(f_last, dtype=float).ravel()
    powers = [np.eye(a.shape[0])]
    for _ in range(horizon - 1):
        powers.append(powers[-1] @ a)
    u = np.stack([powers[horizon - 1 - k] @ loading for k in range(horizon)])
    v = np.stack([powers[k].T @ f_last for k in range(horizon)])
    left = u @ np.linalg.inv(np.atleast_2d(pieces.sigma_f)) @ u.T
    right = v @ np.atleast_2d(pieces.sigma_eta) @ v.T
    return float(min(n_units, n_times) / n_times * np.sum(left * right))


def variance_components(pieces, horizon, f_last, loading, a, n_units, n_times):
    xi = xi_squared(pieces, horizon, f_last, loading, a, n_units, n_times)
    tau = tau_squared(pieces, horizon, f_last, loading, a, n_units, n_times)
    total = xi + tau
    clipped = total < 0 or xi < 0 or tau < 0
    return VarianceComponents(
        xi_sq=max(xi, 0.0),
        tau_sq=max(tau, 0.0),
        sigma_sq=max(xi, 0.0) + max(tau, 0.0),
        pieces=pieces,
        clipped=clipped,
        derived=pieces.derived(f_last, loading),
    )


def one_factor_variance(params, pattern, loading, f_last, n_units, n_times, horizon):
    """Closed-form ``(xi^2, tau^2)`` for one AR(1) factor.

    ``pattern`` is ``"mcar"`` (observation probability ``params.p_obs``) or
    ``"staggered"`` (every unit eventually adopts).  Under MCAR the extra
    missingness term is
    ``delta^2 phi^(2h) Lambda_i^2 F_T^2 / N * (1/p - 1) * E[(Lambda^2/sigma_Lambda^2 - 1)^2]``.
    The tau term uses ``0**0 == 1``, so ``phi = 0, h = 1`` gives
    ``delta^2 / T * Lambda_i^2 F_T^2``.
    """
    phi = params.phi
    d2 = min(n_units, n_times)
    lam2, f2 = float(loading) ** 2, float(f_last) ** 2
    sl2, sf2, se2 = params.sigma_lambda**2, params.sigma_f**2, params.sigma_eps**2
    base = d2 * phi ** (2 * horizon) * se2 * (lam2 / (n_units * sl2) + f2 / (n_times * sf2))
    if pattern == "mcar":
        p = params.p_obs
        xi = base / p + (
            d2 * phi ** (2 * horizon) * lam2 * f2 / n_units * (1.0 / p - 1.0) * params.lambda_kurt
        )
    elif pattern == "staggered":
        xi = base
    else:
        raise ValidationError(f"unknown pattern {pattern!r}")
    tau = d2 / n_times * horizon**2 * phi ** (2 * horizon - 2) * (1.0 - phi**2) * lam2 * f2
    return float(xi), float(tau)


def confidence_interval(point, sigma_sq, n_units, n_times, alpha=0.05):
    """``point -/+ z_{1-alpha/2} sqrt(sigma_sq) / min(sqrt N, sqrt T)``."""
    if sigma_sq < 0:
        raise ValidationError("sigma_sq must be nonnegative")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    half = norm.ppf(1.0 - alpha / 2.0) * math.sqrt(sigma_sq) / math.sqrt(min(n_units, n_times))
    return point - half, point + half


def variance_pieces_frame(pieces, f_last=None, loading=None):
    """One row per named piece (matrices flattened row-major into a string)."""
    return pd.DataFrame(pieces.as_rows(f_last, loading), columns=["piece", "value"])
