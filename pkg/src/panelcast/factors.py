"""Latent factor estimation from a partially observed panel.

The time-by-time second-moment matrix is averaged over the units observed
at both times, its leading eigenvectors (scaled by ``sqrt(T)``) give the
factors, and each unit's loading is a least-squares fit on the times where
that unit is observed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import eigsh

from .errors import AllZeroSpectrum, RankTooLarge, ValidationError
from .panel import build_overlap_index

__all__ = [
    "PairwiseCovariance",
    "FactorModelFit",
    "RankMethod",
    "pairwise_covariance",
    "estimate_factors",
    "estimate_loadings",
    "select_rank",
    "fit_factor_model",
]

DENSE_EIGEN_LIMIT = 2048
LOADING_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class PairwiseCovariance:
    """``sigma_hat[s, t]`` averages ``Y[i,s] * Y[i,t]`` over units seen at both
    times; pairs with no such unit are set to 0 and listed in ``zero_filled``."""

    sigma_hat: np.ndarray
    zero_filled: frozenset
    n_units: int


@dataclass(frozen=True, eq=False)
class FactorModelFit:
    """Estimated factors (``T x r``) and loadings (``N x r``).

    ``eigenvalues`` are the leading eigenvalues of the pairwise covariance
    divided by its dimension, in nonincreasing order (at most ``min(N, T)``).
    ``loading_ok[i]`` is False for units whose loading could not be
    estimated; their row of ``loadings`` is zero.
    """

    factors: np.ndarray
    loadings: np.ndarray
    rank: int
    eigenvalues: np.ndarray
    loading_ok: np.ndarray
    transposed: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_units(self):
        return self.loadings.shape[0]

    @property
    def n_times(self):
        return self.factors.shape[0]

    def fitted(self):
        """Common-component estimate ``loadings @ factors.T``."""
        return self.loadings @ self.factors.T


@dataclass(frozen=True)
class RankMethod:
    """How to choose the number of factors.

    ``kind`` is ``"fixed"`` (``value`` is the rank), ``"explained_variance"``
    (``value`` is the cumulative share threshold) or ``"eigen_ratio"``.
    """

    kind: str = "fixed"
    value: float = 1

    @classmethod
    def parse(cls, spec):
        """Accept an int, a RankMethod, or strings like ``"3"``,
        ``"explained_variance:0.8"``, ``"eigen_ratio"``."""
        if isinstance(spec, RankMethod):
            return spec
        if isinstance(spec, (int, np.integer)):
            return cls("fixed", int(spec))
        text = str(spec).strip()
        if text.isdigit():
            return cls("fixed", int(text))
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind == "fixed":
            return cls("fixed", int(arg))
        if kind == "explained_variance":
            return cls(kind, float(arg) if arg else 0.8)
        if kind == "eigen_ratio":
            return cls(kind, 0)
        raise ValidationError(f"unrecognised rank method {spec!r}")

    def __str__(self):
        if self.kind == "fixed":
            return str(int(self.value))
        if self.kind == "explained_variance":
            return f"explained_variance:{self.value:g}"
        return self.kind


def pairwise_covariance(panel, index=None):
    index = build_overlap_index(panel) if index is None else index
    y = panel.values  # zero where unobserved
    cross = y.T @ y
    counts = index.counts
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.where(counts > 0, cross / counts, 0.0)
    sigma = 0.5 * (sigma + sigma.T)
    s, t = np.nonzero(counts == 0)
    return PairwiseCovariance(
        sigma_hat=sigma,
        zero_filled=frozenset(zip(s.tolist(), t.tolist())),
        n_units=panel.n_units,
    )


def _as_matrix(cov):
    return cov.sigma_hat if isinstance(cov, PairwiseCovariance) else np.asarray(cov, float)


def _leading_eigen(mat, k, method="auto"):
    """Top-``k`` eigenpairs of a symmetric matrix, eigenvalues descending."""
    dim = mat.shape[0]
    if method == "auto":
        method = "dense" if dim <= DENSE_EIGEN_LIMIT else "iterative"
    if method == "dense" or k >= dim - 1:
        vals, vecs = np.linalg.eigh(mat)
        order = np.argsort(vals)[::-1][:k]
        return vals[order], vecs[:, order]
    if method != "iterative":
        raise ValidationError(f"unknown eigen method {method!r}")
    vals, vecs = eigsh(mat, k=k, which="LA", tol=0, v0=np.ones(dim))
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def _fix_signs(mat):
    """Flip columns so each column's largest-magnitude entry is positive."""
    if mat.size == 0:
        return mat, np.ones(mat.shape[1])
    idx = np.argmax(np.abs(mat), axis=0)
    signs = np.sign(mat[idx, np.arange(mat.shape[1])])
    signs[signs == 0] = 1.0
    return mat * signs, signs


def estimate_factors(cov, rank, method="auto"):
    """``sqrt(T)`` times the leading ``rank`` eigenvectors of ``sigma_hat / T``.

    Columns are sign-normalised so that each column's entry of largest
    magnitude is positive (earliest index on ties).
    """
    sigma = _as_matrix(cov)
    t_len = sigma.shape[0]
    if not 1 <= rank <= t_len:
        raise RankTooLarge(f"rank must be in [1, {t_len}], got {rank}")
    _, vecs = _leading_eigen(sigma / t_len, rank, method)
    factors, _ = _fix_signs(np.sqrt(t_len) * vecs)
    return factors


def estimate_loadings(panel, factors):
    """Per-unit least squares of observed outcomes on the factors.

    Returns ``(loadings, ok)``.  A unit gets a zero loading and ``ok=False``
    if it has fewer than ``r`` observed times or its observed-time Gram
    matrix has condition number above 1e12.
    """
    factors = np.asarray(factors, dtype=float)
    w = panel.mask.astype(float)
    r = factors.shape[1]
    gram = np.einsum("it,ta,tb->iab", w, factors, factors)
    rhs = panel.values @ factors
    nobs = panel.mask.sum(axis=1)
    ok = nobs >= r
    if ok.any():
        cond = np.linalg.cond(gram[ok])
        sub = np.flatnonzero(ok)
        ok[sub[~(np.isfinite(cond) & (cond <= LOADING_COND_LIMIT))]] = False
    loadings = np.zeros((panel.n_units, r))
    if ok.any():
        loadings[ok] = np.linalg.solve(gram[ok], rhs[ok][..., None])[..., 0]
    return loadings, ok


def select_rank(eigenvalues, method):
    """Choose the number of factors from a nonincreasing spectrum."""
    method = RankMethod.parse(method)
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0 or not (lam > 0).any():
        raise AllZeroSpectrum("spectrum has no positive eigenvalue")
    if method.kind == "fixed":
        r = int(method.value)
        if r < 1:
            raise ValidationError("fixed rank must be at least 1")
        return r
    if method.kind == "explained_variance":
        pos = np.clip(lam, 0.0, None)
        share = np.cumsum(pos) / pos.sum()
        return int(np.argmax(share >= method.value - 1e-12) + 1)
    if method.kind == "eigen_ratio":
        k_max = max(1, lam.size // 2)
        if lam.size < 2:
            return 1
        num = lam[:k_max]
        den = lam[1:k_max + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
        return int(np.argmax(ratio) + 1)
    raise ValidationError(f"unknown rank method {method.kind!r}")


def fit_factor_model(panel, rank_method=1, transpose=False, eig_method="auto"):
    """Estimate factors and loadings, choosing the rank with ``rank_method``.

    With ``transpose=True`` the roles of units and times are swapped for the
    estimation (useful when ``T > N``, where unit-pair overlaps are larger
    than time-pair overlaps) and the result is mapped back: factors are
    always indexed by time and re-normalised so that ``F.T @ F / T = I``,
    leaving the fitted common component unchanged.
    """
    method = RankMethod.parse(rank_method)
    work = panel.transpose() if transpose else panel
    n, t_len = work.shape
    cov = pairwise_covariance(work)
    n_eig = min(n, t_len)
    eig_mode = eig_method
    if eig_method == "auto" and t_len > DENSE_EIGEN_LIMIT:
        eig_mode = "iterative"
        n_eig = min(n_eig, 64)
    vals, _ = _leading_eigen(cov.sigma_hat / t_len, n_eig, eig_mode)
    r = select_rank(vals, method)
    if r > min(panel.n_units, panel.n_times):
        raise RankTooLarge(
            f"rank {r} exceeds min(N, T) = {min(panel.n_units, panel.n_times)}"
        )
    factors = estimate_factors(cov, r, eig_mode)
    loadings, ok = estimate_loadings(work, factors)
    diagnostics = {"zero_filled_pairs": len(cov.zero_filled)}
    if not transpose:
        return FactorModelFit(factors, loadings, r, vals, ok, False, diagnostics)

    # work-orientation "loadings" are time-indexed; "factors" are unit-indexed
    time_part, unit_part = loadings, factors
    diagnostics["time_ok"] = ok
    u, s, vt = np.linalg.svd(time_part, full_matrices=False)
    if (s <= s[0] * 1e-12).any():
        raise RankTooLarge("time-side estimate is rank deficient after transposition")
    t_orig = panel.n_times
    new_factors = np.sqrt(t_orig) * u
    new_loadings = unit_part @ vt.T * (s / np.sqrt(t_orig))
    new_factors, signs = _fix_signs(new_factors)
    new_loadings = new_loadings * signs
    unit_ok = panel.mask.sum(axis=1) >= r
    new_loadings[~unit_ok] = 0.0
    return FactorModelFit(new_factors, new_loadings, r, vals, unit_ok, True, diagnostics)
