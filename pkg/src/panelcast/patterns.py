"""Observation-mask generators: MCAR, staggered, simultaneous adoption."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingAux, ValidationError

__all__ = ["PatternConfig", "generate_mask", "simultaneous_counts"]

KINDS = ("mcar", "staggered", "simultaneous", "fully_observed")

# (fraction masked, start of masked block as a fraction of T) for X=1 and X=0
DEFAULT_SIMULTANEOUS = {1: (0.25, 0.75), 0: (0.625, 0.375)}


@dataclass(frozen=True)
class PatternConfig:
    """Description of an observation mechanism.

    Parameters
    ----------
    kind : {"mcar", "staggered", "simultaneous", "fully_observed"}
    p : float
        Observation probability for MCAR, in (0, 1].
    adoption_cdf : array_like or callable, optional
        Staggered only.  Values ``G(1), ..., G(T)`` of the adoption-time CDF
        (nondecreasing, in [0, 1]); ``1 - G(T)`` is the mass of units that
        never adopt.  A callable is evaluated at ``t = 1..T``.
    simultaneous_params : dict, optional
        ``{group: (fraction_masked, start_fraction)}`` keyed by the binary
        covariate ``X_i``.  Units in a group are masked from time
        ``ceil(start_fraction * T)`` (1-based) onward.
    seed : int, optional
    """

    kind: str = "mcar"
    p: float = 1.0
    adoption_cdf: object = None
    simultaneous_params: dict = field(default_factory=lambda: dict(DEFAULT_SIMULTANEOUS))
    seed: int = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise ValidationError(f"unknown pattern kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not 0.0 < self.p <= 1.0:
            raise ValidationError(f"p must lie in (0, 1], got {self.p}")
        if kind == "staggered" and self.adoption_cdf is None:
            raise ValidationError("staggered pattern needs adoption_cdf")
        for frac, start in self.simultaneous_params.values():
            if not (0 <= frac <= 1 and 0 <= start <= 1):
                raise ValidationError("simultaneous fractions must lie in [0, 1]")


def _adoption_table(cdf, n_times):
    if callable(cdf):
        g = np.array([cdf(t) for t in range(1, n_times + 1)], dtype=float)
    else:
        g = np.asarray(cdf, dtype=float)
    if g.shape != (n_times,):
        raise ValidationError(f"adoption_cdf must have {n_times} values, got shape {g.shape}")
    if (g < 0).any() or (g > 1).any() or (np.diff(g) < 0).any():
        raise ValidationError("adoption_cdf must be nondecreasing with values in [0, 1]")
    return g


def simultaneous_counts(group_size, fraction):
    """Number of units masked in a group: nearest integer, ties to even."""
    return int(round(group_size * fraction))


def generate_mask(config, n_units, n_times, aux=None):
    """Draw an ``n_units x n_times`` 0/1 observation mask.

    ``aux`` supplies per-unit reals for the simultaneous pattern; the group
    covariate is ``X_i = 1{aux_i >= 0}``.  The result depends only on the
    arguments and ``config.seed``.
    """
    if n_units < 1 or n_times < 1:
        raise ValidationError("mask dimensions must be positive")
    rng = np.random.default_rng(config.seed)
    kind = config.kind
    if kind == "fully_observed":
        return np.ones((n_units, n_times), dtype=np.int8)
    if kind == "mcar":
        # newest column first, so masks of different lengths share recent columns
        u = rng.random((n_times, n_units))[::-1].T
        return (u < config.p).astype(np.int8)
    if kind == "staggered":
        g = _adoption_table(config.adoption_cdf, n_times)
        # tau = min{t : u < G(t)}; tau == n_times encodes "never"
        tau = np.searchsorted(g, rng.random(n_units), side="right")
        return (np.arange(n_times)[None, :] >= tau[:, None]).astype(np.int8)
    if aux is None:
        raise MissingAux("simultaneous pattern needs per-unit aux values")
    aux = np.asarray(aux, dtype=float).ravel()
    if aux.shape != (n_units,):
        raise ValidationError(f"aux must have length {n_units}")
    x = (aux >= 0).astype(int)
    mask = np.ones((n_units, n_times), dtype=np.int8)
    for group, (frac, start_frac) in sorted(config.simultaneous_params.items()):
        members = np.flatnonzero(x == group)
        k = simultaneous_counts(len(members), frac)
        if k == 0:
            continue
        chosen = rng.choice(members, size=k, replace=False)
        start = math.ceil(start_frac * n_times) - 1
        mask[chosen, max(start, 0):] = 0
    return mask
