"""Partially observed panels and the overlap bookkeeping built on them.

A :class:`Panel` couples an ``N x T`` outcome matrix with a binary
observation mask.  Unobserved cells are zeroed on construction, so no
estimator downstream can be influenced by whatever was stored there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ValidationError, ZeroOverlap

__all__ = [
    "Panel",
    "OverlapIndex",
    "OverlapStats",
    "build_overlap_index",
    "compute_overlap_stats",
    "overlap_shortfall_frequency",
    "read_wide_csv",
    "read_long_csv",
    "write_wide_csv",
]


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Outcome matrix with an observation mask.

    Parameters
    ----------
    values : array_like, shape (N, T)
        Outcomes. Entries where ``mask`` is 0 may hold anything (NaN
        included); they are replaced by 0.
    mask : array_like, shape (N, T), optional
        1 where observed. Defaults to ``isfinite(values)``.
    unit_labels, time_labels : sequence, optional
        Carried through for I/O only.
    """

    values: np.ndarray
    mask: np.ndarray
    unit_labels: tuple = field(default=None)
    time_labels: tuple = field(default=None)

    def __init__(self, values, mask=None, unit_labels=None, time_labels=None):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {values.shape}")
        if mask is None:
            mask = np.isfinite(values)
        mask = np.asarray(mask)
        if mask.shape != values.shape:
            raise ValidationError(
                f"mask shape {mask.shape} does not match values shape {values.shape}"
            )
        if not np.isin(mask, (0, 1)).all():
            raise ValidationError("mask entries must be 0 or 1")
        mask = mask.astype(bool)
        n, t = values.shape
        if n < 1 or t < 2:
            raise ValidationError(f"need N >= 1 and T >= 2, got N={n}, T={t}")
        if not np.isfinite(values[mask]).all():
            raise ValidationError("observed entries must be finite")
        clean = np.where(mask, values, 0.0)
        if unit_labels is None:
            unit_labels = tuple(range(n))
        if time_labels is None:
            time_labels = tuple(range(t))
        if len(unit_labels) != n or len(time_labels) != t:
            raise ValidationError("label lengths do not match panel dimensions")
        object.__setattr__(self, "values", _frozen(clean))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "unit_labels", tuple(unit_labels))
        object.__setattr__(self, "time_labels", tuple(time_labels))

    @property
    def n_units(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def transpose(self):
        """Swap the unit and time roles."""
        return Panel(self.values.T, self.mask.T, self.time_labels, self.unit_labels)

    def with_values(self, values):
        return Panel(values, self.mask, self.unit_labels, self.time_labels)

    def observed_fraction(self):
        return float(self.mask.mean())

    def __repr__(self):
        return (
            f"Panel(n_units={self.n_units}, n_times={self.n_times}, "
            f"observed={self.observed_fraction():.3f})"
        )


@dataclass(frozen=True, eq=False)
class OverlapIndex:
    """Pairwise overlap counts ``counts[s, t] = |{i : W[i,s] = W[i,t] = 1}|``."""

    counts: np.ndarray
    mask: np.ndarray

    def units(self, s, t):
        """Indices of the units observed at both ``s`` and ``t``."""
        return np.flatnonzero(self.mask[:, s] & self.mask[:, t])

    def empty_pairs(self):
        s, t = np.nonzero(self.counts == 0)
        return list(zip(s.tolist(), t.tolist()))


def build_overlap_index(panel):
    w = panel.mask.astype(np.int64)
    return OverlapIndex(counts=_frozen(w.T @ w), mask=panel.mask)


@dataclass(frozen=True)
class OverlapStats:
    """Empirical overlap fractions and the missingness weights built from them.

    ``alpha[s, t]`` is ``|Q_st| / N``; ``nu[s]`` is ``alpha[s, T-1]``.  The
    three ``omega`` values are the averaged ratios of four-way to two-way
    overlap fractions that scale the factor-estimation variance.  When
    ``omega3`` is estimated by sampling, ``omega3_se`` carries its Monte Carlo
    standard error (0 when computed exactly).
    """

    alpha: np.ndarray
    omega1: float
    omega2: float
    omega3: float
    nu: np.ndarray
    omega3_se: float = 0.0


def compute_overlap_stats(panel, quad_samples=0, seed=None, index=None):
    """Plug-in estimates of the overlap fractions and missingness weights.

    All three weights are evaluated exactly by factoring the sums over units:
    for unit ``i`` let ``a_i = sum_{s,t} W_is W_it / alpha_st`` and
    ``b_i = sum_s W_is / alpha_{s,T}``; then

    * ``omega1 = mean_i(W_iT * b_i**2) / T**2``
    * ``omega2 = mean_i(W_iT * a_i * b_i) / T**3``
    * ``omega3 = mean_i(a_i**2) / T**4``

    which costs ``O(N T^2)``.  If ``quad_samples > 0`` the ``omega3`` sum is
    instead approximated from that many uniformly drawn quadruples and its
    standard error reported.

    Raises
    ------
    ZeroOverlap
        If any pair of times shares no observed unit.
    """
    if quad_samples < 0:
        raise ValidationError("quad_samples must be nonnegative")
    index = build_overlap_index(panel) if index is None else index
    n, t_len = panel.shape
    counts = index.counts
    zero = np.argwhere(counts == 0)
    if len(zero):
        raise ZeroOverlap(*zero[0])
    alpha = counts / n
    inv_alpha = 1.0 / alpha
    w = panel.mask.astype(float)
    last = w[:, -1]
    a = np.einsum("is,st,it->i", w, inv_alpha, w)
    b = w @ inv_alpha[:, -1]
    omega1 = float(np.mean(last * b**2) / t_len**2)
    omega2 = float(np.mean(last * a * b) / t_len**3)
    omega3_se = 0.0
    if quad_samples:
        omega3, omega3_se = _omega3_sampled(w, inv_alpha, quad_samples, seed)
    else:
        omega3 = float(np.mean(a**2) / t_len**4)
    return OverlapStats(
        alpha=_frozen(alpha),
        omega1=omega1,
        omega2=omega2,
        omega3=omega3,
        nu=_frozen(alpha[:, -1]),
        omega3_se=omega3_se,
    )


def _omega3_sampled(w, inv_alpha, n_samples, seed, chunk=4096):
    rng = np.random.default_rng(seed)
    t_len = w.shape[1]
    terms = np.empty(n_samples)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        s, t, s2, t2 = rng.integers(0, t_len, size=(4, m))
        beta = np.mean(w[:, s] * w[:, t] * w[:, s2] * w[:, t2], axis=0)
        terms[done:done + m] = beta * inv_alpha[s, t] * inv_alpha[s2, t2]
        done += m
    return float(terms.mean()), float(terms.std(ddof=1) / np.sqrt(n_samples))


def overlap_shortfall_frequency(p, q_lower, n_units, n_times, draws, seed=None):
    """Fraction of MCAR(p) mask draws whose smallest pairwise overlap is below
    ``n_units * q_lower``.

    For ``q_lower < p**2`` this frequency goes to zero as ``n_units`` grows.
    """
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(draws):
        w = (rng.random((n_units, n_times)) < p).astype(np.int64)
        if (w.T @ w).min() < n_units * q_lower:
            hits += 1
    return hits / draws


# ---------------------------------------------------------------- CSV I/O


def read_wide_csv(path, mask_path=None):
    """Read a wide panel: one row per unit, one column per time.

    The first column holds unit labels and the header row holds time labels.
    Empty cells and NaN mean missing.  A companion 0/1 mask file of the same
    layout, if given, overrides the missingness inferred from the values.
    """
    frame = pd.read_csv(path, index_col=0)
    values = frame.to_numpy(dtype=float)
    mask = None
    if mask_path is not None:
        mframe = pd.read_csv(mask_path, index_col=0)
        if mframe.shape != frame.shape:
            raise ValidationError(
                f"mask file shape {mframe.shape} does not match panel {frame.shape}"
            )
        mask = mframe.to_numpy()
        if np.isnan(mask.astype(float)).any():
            raise ValidationError("mask file contains empty cells")
        mask = mask.astype(int)
    return Panel(
        values,
        mask,
        unit_labels=tuple(frame.index.tolist()),
        time_labels=tuple(frame.columns.tolist()),
    )


def read_long_csv(path, unit="unit", time="time", value="value", observed="observed"):
    """Read a long panel with one row per (unit, time) cell.

    ``observed`` is optional; when absent, a cell counts as observed iff its
    value is present.  Cells absent from the file are missing.
    """
    frame = pd.read_csv(path)
    for col in (unit, time, value):
        if col not in frame:
            raise ValidationError(f"long CSV lacks column {col!r}")
    units = pd.unique(frame[unit])
    times = np.sort(pd.unique(frame[time]))
    ui = pd.Index(units).get_indexer(frame[unit])
    ti = pd.Index(times).get_indexer(frame[time])
    values = np.full((len(units), len(times)), np.nan)
    mask = np.zeros(values.shape, dtype=int)
    vals = frame[value].to_numpy(dtype=float)
    obs = np.isfinite(vals)
    if observed in frame:
        obs &= frame[observed].fillna(0).to_numpy().astype(bool)
    values[ui, ti] = vals
    mask[ui, ti] = obs.astype(int)
    return Panel(values, mask, unit_labels=tuple(units.tolist()), time_labels=tuple(times.tolist()))


def write_wide_csv(panel, path, mask_path=None):
    vals = np.where(panel.mask, panel.values, np.nan)
    frame = pd.DataFrame(vals, index=list(panel.unit_labels), columns=list(panel.time_labels))
    frame.index.name = "unit"
    frame.to_csv(Path(path))
    if mask_path is not None:
        m = pd.DataFrame(panel.mask.astype(int), index=frame.index, columns=frame.columns)
        m.to_csv(Path(mask_path))
