import numpy as np
import pytest
from numpy.testing import assert_allclose

from panelcast.detrend import (
    _basis,
    cv_penalty_scores,
    detrend_factors,
    fit_penalized_spline,
    penalty_grid,
    tune_penalty_blockcv,
)
from panelcast.errors import TooShort, ValidationError

from . import oracles


def ar1(n, phi, sd, seed):
    rng = np.random.default_rng(seed)
    e = np.zeros(n)
    for t in range(1, n):
        e[t] = phi * e[t - 1] + sd * rng.normal()
    return e


class TestSpline:
    @pytest.mark.parametrize("penalty", [1e-4, 1.0, 1e4])
    def test_lines_reproduced(self, penalty):
        x = np.arange(60.0)
        for y in (np.full(60, 3.0), 0.5 - 0.2 * x):
            fit = fit_penalized_spline(y, penalty)
            assert_allclose(fit.fitted, y, atol=1e-8)
            assert_allclose(fit.extrapolate(3), y[-1] + (y[1] - y[0]) * np.arange(1, 4),
                            atol=1e-7)

    def test_quadratic(self):
        t = np.arange(256.0)
        y = 2 * (t / 256) ** 2
        fit = fit_penalized_spline(y, 1e-2)
        assert np.max(np.abs(fit.residuals)) < 0.05

    def test_design_matches_cox_de_boor(self):
        design, knots = _basis(20, 4)
        ref = oracles.bspline_design(np.arange(20.0), knots, 3)
        assert_allclose(design, ref, atol=1e-12)
        assert_allclose(design.sum(axis=1), 1.0, atol=1e-12)

    def test_rss_monotone_in_penalty(self):
        y = np.sin(np.arange(80) / 6) + ar1(80, 0.3, 0.3, seed=0)
        rss = [np.sum(fit_penalized_spline(y, lam).residuals ** 2) for lam in penalty_grid(9)]
        assert np.all(np.diff(rss) >= -1e-10)

    def test_bad_input(self):
        with pytest.raises(ValidationError):
            fit_penalized_spline(np.ones(3), 1.0)
        with pytest.raises(ValidationError):
            fit_penalized_spline(np.ones(10), -1.0)


class TestTuning:
    def test_too_short(self):
        with pytest.raises(TooShort):
            cv_penalty_scores(np.arange(20.0))

    def test_white_noise_prefers_smooth(self):
        grid = penalty_grid()
        picks = [tune_penalty_blockcv(np.random.default_rng(s).normal(size=200), grid=grid)
                 for s in range(10)]
        assert np.median(np.log10(picks)) >= np.log10(grid[len(grid) // 2])

    def test_noiseless_quadratic(self):
        t = np.arange(128.0)
        y = 2 * (t / 128) ** 2
        res = detrend_factors(y)
        assert np.mean(res.residual ** 2) < 1e-4

    def test_scores_cover_grid(self):
        grid = penalty_grid(5)
        scores = cv_penalty_scores(ar1(100, 0.5, 1.0, seed=1), grid=grid)
        assert_allclose(list(scores), grid)
        assert all(np.isfinite(v) and v > 0 for v in scores.values())


class TestDetrendFactors:
    def test_decomposition(self):
        t = np.arange(150.0)
        f = np.column_stack([2 * (t / 150) ** 2 + ar1(150, 0.5, 0.1, 2),
                             ar1(150, 0.7, 0.2, 3)])
        res = detrend_factors(f)
        assert_allclose(res.trend + res.residual, f, atol=1e-12)
        assert res.extrapolate(4).shape == (4, 2)
        assert len(res.fits) == 2 and res.fits[0].cv_scores

    def test_trended_residual_is_centred(self):
        t = np.arange(256.0)
        f = 2 * (t / 256) ** 2 + ar1(256, 0.5, 0.1, seed=4)
        res = detrend_factors(f)
        resid = res.residual[:, 0]
        # mean within three naive standard errors, inflated for AR(1) at 0.5
        se = resid.std() / np.sqrt(len(resid)) * np.sqrt(3)
        assert abs(resid.mean()) < 3 * se
        assert np.max(np.abs(res.trend[:, 0] - 2 * (t / 256) ** 2)) < 0.15
