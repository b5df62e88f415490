"""Weighted posterior summaries of the adjusted density ensemble."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .base_grid import BaseDensity, GridSpec, trapezoid_integrate
from .func_reg import AdjustedEnsemble
from .gp_prior import logistic

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PosteriorEnsemble:
    """``densities`` is ``(m, g, k)``; every member has unit mass on the grid."""

    grid: GridSpec
    densities: np.ndarray = field(repr=False)
    weights: np.ndarray
    indices: np.ndarray
    degenerate: np.ndarray = field(repr=False)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def effective_sample_size(self) -> float:
        w = self.weights
        return float(w.sum() / w.max()) if w.max() > 0 else 0.0


@dataclass(frozen=True, eq=False)
class DensitySummary:
    mean: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    level: float
    mean_of_mean: np.ndarray


@dataclass(frozen=True, eq=False)
class RankDistribution:
    """``rank[i, r]``: probability group ``i`` has rank ``r + 1`` (rank 1 = largest mean).

    ``exceed[i, h]``: probability group ``i``'s density mean exceeds group ``h``'s.
    """

    rank: np.ndarray
    exceed: np.ndarray


def densities_from_adjusted(adjusted: AdjustedEnsemble, base: BaseDensity, grid: GridSpec) -> PosteriorEnsemble:
    """Logistic map of adjusted latents, renormalised per record and group.

    A record with any non-positive or non-finite normalising constant keeps
    its slot but gets weight zero.
    """
    z = np.asarray(adjusted.latent, dtype=float)
    weights = np.array(adjusted.weights, dtype=float)
    finite = np.all(np.isfinite(z), axis=(1, 2))
    u = logistic(np.where(np.isfinite(z), z, 0.0)) * base.pdf(grid.psi)
    c = trapezoid_integrate(grid, u)
    ok = finite & np.all((c > 0) & np.isfinite(c), axis=1)
    c_safe = np.where((c > 0) & np.isfinite(c), c, 1.0)
    dens = u / c_safe[..., None]
    bad = ~ok
    if bad.any():
        log.warning("event=degenerate_adjusted records=%d", int(bad.sum()))
        weights[bad] = 0.0
        dens[bad] = base.pdf(grid.psi) / trapezoid_integrate(grid, base.pdf(grid.psi))
    if not weights.sum() > 0:
        raise ValueError("all adjusted records are degenerate")
    return PosteriorEnsemble(grid, dens, weights, np.asarray(adjusted.indices), bad)


def _normalised_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ValueError("total posterior weight is zero")
    return w / total


def weighted_mean_density(ensemble: PosteriorEnsemble) -> np.ndarray:
    """Pointwise weighted average, renormalised to unit mass: ``(g, k)``."""
    w = _normalised_weights(ensemble.weights)
    mean = np.tensordot(w, ensemble.densities, axes=(0, 0))
    return mean / np.asarray(trapezoid_integrate(ensemble.grid, mean))[..., None]


def weighted_quantile(values, weights, q):
    """Weighted quantile with linear interpolation between order statistics.

    Zero-weight values are dropped. With sorted values ``v_1..v_n`` and
    weights ``w_i``, value ``v_i`` sits at cumulative position
    ``(W_{i-1}) / (W_n - w_n)`` where ``W_i`` is the running weight sum;
    for equal weights this is the usual ``(i - 1) / (n - 1)`` rule.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        raise ValueError("no positively weighted values")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    if v.size == 1:
        return np.full(np.shape(q), v[0]) if np.ndim(q) else float(v[0])
    before = np.cumsum(w) - w
    pos = before / (w.sum() - w[-1])
    out = np.interp(q, pos, v)
    return float(out) if np.ndim(out) == 0 else out


def pointwise_band(ensemble: PosteriorEnsemble, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Central weighted credible band at each grid point: ``(lower, upper)``, each ``(g, k)``."""
    if not 0 < level < 1:
        raise ValueError(f"band level must lie in (0, 1), got {level}")
    _normalised_weights(ensemble.weights)
    tail = (1.0 - level) / 2.0
    probs = np.array([tail, 1.0 - tail])
    m, g, k = ensemble.densities.shape
    lower = np.empty((g, k))
    upper = np.empty((g, k))
    for i in range(g):
        for j in range(k):
            lo, hi = weighted_quantile(ensemble.densities[:, i, j], ensemble.weights, probs)
            lower[i, j], upper[i, j] = lo, hi
    return lower, upper


def density_means(grid: GridSpec, densities: np.ndarray) -> np.ndarray:
    """``integral x f(x) dx`` by the trapezoid rule over the last axis."""
    return trapezoid_integrate(grid, np.asarray(densities) * grid.psi)


def summarize_density(ensemble: PosteriorEnsemble, level: float = 0.95) -> DensitySummary:
    mean = weighted_mean_density(ensemble)
    lower, upper = pointwise_band(ensemble, level)
    return DensitySummary(mean, lower, upper, level, np.atleast_1d(density_means(ensemble.grid, mean)))


def rank_distribution(ensemble: PosteriorEnsemble) -> RankDistribution:
    """Weighted distribution of each group's rank by density mean."""
    w = _normalised_weights(ensemble.weights)
    means = density_means(ensemble.grid, ensemble.densities)
    m, g = means.shape
    if g < 2:
        raise ValueError("ranking needs at least two groups")
    rank = np.zeros((g, g))
    exceed = np.zeros((g, g))
    groups = np.arange(g)
    for ell in range(m):
        if w[ell] == 0:
            continue
        mu = means[ell]
        # Descending by mean; equal means keep group order.
        order = np.lexsort((groups, -mu))
        rank[order, np.arange(g)] += w[ell]
        exceed += w[ell] * (mu[:, None] > mu[None, :])
    return RankDistribution(rank, exceed)


def band_coverage(ensemble: PosteriorEnsemble, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Weighted fraction of members inside the band at each grid point, ``(g, k)``."""
    w = _normalised_weights(ensemble.weights)
    d = ensemble.densities
    inside = (d >= lower[None]) & (d <= upper[None])
    return np.tensordot(w, inside.astype(float), axes=(0, 0))
