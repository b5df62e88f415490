"""Hierarchical Gaussian-process prior over a set of densities.

Latent functions live on a finite grid (the surrogate prior): each hierarchy
node draws a multivariate normal vector centred on its parent, the top node
centred on a constant mean. Leaf latents become densities through the
logistic map times the base density, normalised by grid quadrature.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

from .base_grid import BaseDensity, GridSpec, trapezoid_integrate
from .splines import FittedCurve, SplineBasis, evaluate_many

log = logging.getLogger(__name__)

DEFAULT_MEAN = -10.0
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
M_SAFETY = 1.05
ACCEPT_FLOOR = 1e-4


class DegenerateDraw(ArithmeticError):
    """A latent draw produced a zero or non-finite normalising constant."""


class SamplerError(RuntimeError):
    """Rejection sampling could not reach its acceptance floor."""


@dataclass(frozen=True)
class CovParams:
    sigma: float
    alpha: float

    def __post_init__(self):
        for name in ("sigma", "alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class Gamma:
    """Gamma distribution in the shape/rate parametrisation."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"Gamma shape and rate must be positive, got ({self.shape}, {self.rate})")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.gamma(self.shape, 1.0 / self.rate))


# A fixed float pins a hyperparameter; the prior then contributes no draw.
Hyper = Union[Gamma, float]


@dataclass(frozen=True)
class LevelPrior:
    sigma: Hyper
    alpha: Hyper

    def sample(self, rng: np.random.Generator) -> CovParams:
        s = self.sigma.sample(rng) if isinstance(self.sigma, Gamma) else float(self.sigma)
        a = self.alpha.sample(rng) if isinstance(self.alpha, Gamma) else float(self.alpha)
        # Gamma draws can underflow to exactly zero for tiny shapes.
        return CovParams(max(s, 1e-300), max(a, 1e-300))


@dataclass(frozen=True)
class HyperPrior:
    """One :class:`LevelPrior` per hierarchy level, leaf level first."""

    levels: tuple[LevelPrior, ...]

    @classmethod
    def gamma(cls, n_levels: int, sigma=(3.0, 5.0), alpha=(1.0, 0.1)) -> "HyperPrior":
        lp = LevelPrior(Gamma(*sigma), Gamma(*alpha))
        return cls(tuple(lp for _ in range(n_levels)))

    @classmethod
    def fixed(cls, params: Sequence[tuple[float, float]]) -> "HyperPrior":
        return cls(tuple(LevelPrior(float(s), float(a)) for s, a in params))

    def sample(self, rng: np.random.Generator) -> tuple[CovParams, ...]:
        return tuple(lp.sample(rng) for lp in self.levels)


@dataclass(frozen=True, eq=False)
class HierarchySpec:
    """Tree of GP nodes above the leaf groups.

    ``parent_maps[0]`` maps each of the ``g`` leaf groups to a level-2 node,
    ``parent_maps[1]`` maps level-2 nodes to level-3 nodes, and so on; the
    last map must send everything to the single root node 0.
    """

    parent_maps: tuple[np.ndarray, ...]
    mean_const: float = DEFAULT_MEAN

    def __post_init__(self):
        if not self.parent_maps:
            raise ValueError("a hierarchy needs at least two levels")
        maps = []
        for level, pm in enumerate(self.parent_maps):
            pm = np.asarray(pm, dtype=int)
            if pm.ndim != 1 or pm.size == 0:
                raise ValueError(f"parent map {level} must be a non-empty vector")
            if pm.min() < 0:
                raise ValueError(f"parent map {level} has negative indices")
            n_parents = pm.max() + 1
            if set(np.unique(pm)) != set(range(n_parents)):
                raise ValueError(f"parent map {level} leaves a node without children")
            if level > 0 and pm.size != maps[-1].max() + 1:
                raise ValueError(f"parent map {level} size does not match level {level + 1} node count")
            maps.append(pm)
        if maps[-1].max() != 0:
            raise ValueError("top parent map must send every node to the root")
        if not math.isfinite(self.mean_const):
            raise ValueError("mean_const must be finite")
        object.__setattr__(self, "parent_maps", tuple(maps))

    @classmethod
    def two_level(cls, g: int, mean_const: float = DEFAULT_MEAN) -> "HierarchySpec":
        return cls((np.zeros(g, dtype=int),), mean_const)

    @classmethod
    def three_level(cls, region_of: Sequence[int], mean_const: float = DEFAULT_MEAN) -> "HierarchySpec":
        region_of = np.asarray(region_of, dtype=int)
        return cls((region_of, np.zeros(region_of.max() + 1, dtype=int)), mean_const)

    @property
    def levels(self) -> int:
        return len(self.parent_maps) + 1

    @property
    def n_groups(self) -> int:
        return self.parent_maps[0].size

    def nodes_per_level(self) -> list[int]:
        """Node counts from the leaves up to the root."""
        return [pm.size for pm in self.parent_maps] + [1]


@dataclass(frozen=True, eq=False)
class PriorDraw:
    """One joint draw from the hierarchical prior.

    ``latent[0]`` holds the ``(g, k)`` leaf latents, ``latent[-1]`` the
    ``(1, k)`` top-level latent. ``cov_params`` follows the same order.
    """

    cov_params: tuple[CovParams, ...]
    latent: tuple[np.ndarray, ...]
    density_grids: np.ndarray = field(repr=False)
    norm_consts: np.ndarray = field(repr=False)
    redraws: int = 0

    @property
    def leaf_latent(self) -> np.ndarray:
        return self.latent[0]


def sq_exp_cov(x, x2, p: CovParams):
    """Squared-exponential kernel ``sigma^2 exp(-alpha (x - x2)^2)``."""
    d = np.subtract(x, x2)
    return p.sigma**2 * np.exp(-p.alpha * d * d)


def cov_matrix(grid: GridSpec | np.ndarray, p: CovParams) -> np.ndarray:
    psi = grid.psi if isinstance(grid, GridSpec) else np.atleast_1d(np.asarray(grid, dtype=float))
    c = sq_exp_cov(psi[:, None], psi[None, :], p)
    np.fill_diagonal(c, p.sigma**2)
    return c


def cholesky_jittered(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding escalating diagonal jitter on failure.

    The jitter is scaled by the mean diagonal (``sigma^2`` for a kernel
    matrix). A zero matrix factors to zero.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    scale = float(np.mean(np.diag(cov)))
    if scale == 0.0 and not np.any(cov):
        return np.zeros_like(cov)
    eye = np.eye(cov.shape[0])
    for eta in JITTER_LADDER:
        try:
            return np.linalg.cholesky(cov + eta * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        f"covariance not positive definite after jitter {JITTER_LADDER[-1]:g} x {scale:g}"
    )


def sample_mvn(mean, cov, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from ``N(mean, cov)`` via a jittered Cholesky factor.

    With ``size`` given, returns ``(size, k)`` independent draws.
    """
    mean = np.asarray(mean, dtype=float)
    if not np.all(np.isfinite(mean)):
        raise ValueError("mean must be finite")
    chol = cholesky_jittered(cov)
    k = chol.shape[0]
    if mean.shape[-1] != k:
        raise ValueError(f"mean length {mean.shape[-1]} does not match covariance size {k}")
    if size is None:
        return mean + chol @ rng.standard_normal(k)
    return mean + rng.standard_normal((size, k)) @ chol.T


def logistic(z):
    return expit(z)


def density_from_latent(z, base: BaseDensity, grid: GridSpec):
    """Map latent grid values to a normalised density grid.

    Accepts ``(k,)`` or ``(g, k)`` latents; returns ``(density, c)`` with
    matching leading shape.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DegenerateDraw("latent values must be finite")
    u = logistic(z) * base.pdf(grid.psi)
    c = trapezoid_integrate(grid, u)
    c_arr = np.asarray(c)
    if not np.all(np.isfinite(c_arr)) or np.any(c_arr <= 0):
        raise DegenerateDraw(f"normalising constant {c} is not positive and finite")
    dens = u / c_arr[..., None] if c_arr.ndim else u / c
    return dens, c


def sample_latents(h: HierarchySpec, params: Sequence[CovParams], grid: GridSpec,
                   rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    """Top-down latent draws for fixed covariance parameters (leaf level first)."""
    if len(params) != h.levels:
        raise ValueError(f"need {h.levels} covariance parameter sets, got {len(params)}")
    counts = h.nodes_per_level()
    top_mean = np.full((1, grid.k), h.mean_const)
    chol = cholesky_jittered(cov_matrix(grid, params[-1]))
    layers = [top_mean + rng.standard_normal((1, grid.k)) @ chol.T]
    for level in range(h.levels - 2, -1, -1):
        parent = layers[-1][h.parent_maps[level]]
        chol = cholesky_jittered(cov_matrix(grid, params[level]))
        layers.append(parent + rng.standard_normal((counts[level], grid.k)) @ chol.T)
    return tuple(reversed(layers))


def sample_prior_draw(h: HierarchySpec, hp: HyperPrior, grid: GridSpec, base: BaseDensity,
                      rng: np.random.Generator, max_redraws: int = 100) -> PriorDraw:
    """Sample hyperparameters, latents and leaf densities from the top down."""
    if len(hp.levels) != h.levels:
        raise ValueError(f"hyperprior has {len(hp.levels)} levels, hierarchy has {h.levels}")
    for attempt in range(max_redraws + 1):
        params = hp.sample(rng)
        latent = sample_latents(h, params, grid, rng)
        try:
            dens, c = density_from_latent(latent[0], base, grid)
        except DegenerateDraw:
            log.debug("degenerate prior draw, redrawing (attempt %d)", attempt + 1)
            continue
        return PriorDraw(params, latent, dens, np.asarray(c), redraws=attempt)
    raise DegenerateDraw(f"no valid prior draw in {max_redraws + 1} attempts")


def refinement(grid: GridSpec, factor: int = 10) -> np.ndarray:
    return np.linspace(grid.x_low, grid.x_high, factor * (grid.k - 1) + 1)


def envelope_constant(density: FittedCurve, base: BaseDensity, x_dense: np.ndarray) -> float:
    """Numerical ``max f/b`` over ``x_dense``, inflated by the safety factor."""
    f = np.maximum(density(x_dense), 0.0)
    ratio = f / base.pdf(x_dense)
    m = float(np.max(ratio))
    if not (math.isfinite(m) and m > 0):
        raise SamplerError("fitted density has no positive mass on the grid")
    return M_SAFETY * m


def simulate_dataset(density: FittedCurve, base: BaseDensity, n: int, rng: np.random.Generator,
                     grid: GridSpec | None = None, max_proposals: int = 100_000) -> np.ndarray:
    """Rejection-sample ``n`` points from a fitted density with proposal ``b``.

    Proposals come from the base density truncated to the spline range. The
    envelope is searched on a 10x refinement of ``grid`` (or of the knot
    span when no grid is given). A proposal whose ratio exceeds the envelope
    raises it and restarts sampling, so no point is accepted under a wrong
    bound.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    basis = density.basis
    if grid is not None:
        x_dense = refinement(grid)
    else:
        x_dense = np.linspace(basis.x_low, basis.x_high, 20 * basis.n_basis + 1)
    m_const = envelope_constant(density, base, x_dense)
    coef = density.coefficients[None, :]
    return _rejection(basis, coef, base, [n], [m_const], rng, max_proposals)[0]


def simulate_groups(basis: SplineBasis, coefficients: np.ndarray, base: BaseDensity,
                    sizes: Sequence[int], rng: np.random.Generator, x_dense: np.ndarray,
                    max_proposals: int = 100_000) -> list[np.ndarray]:
    """Rejection-sample every leaf group of one draw; ``coefficients`` is ``(g, n_basis)``."""
    f_dense = np.maximum(evaluate_many(basis, coefficients, x_dense), 0.0)
    m = M_SAFETY * np.max(f_dense / base.pdf(x_dense)[None, :], axis=1)
    if not np.all(np.isfinite(m) & (m > 0)):
        raise SamplerError("fitted density has no positive mass on the grid")
    return _rejection(basis, coefficients, base, sizes, m, rng, max_proposals)


_MAX_BATCH = 1_000_000


def _rejection(basis, coefficients, base, sizes, m_consts, rng, min_proposals):
    lo, hi = basis.x_low, basis.x_high
    out = []
    for i, n in enumerate(sizes):
        n = int(n)
        m = float(m_consts[i])
        coef = coefficients[i][None, :]
        accepted: list[np.ndarray] = []
        have = used = 0
        while have < n:
            batch = min(_MAX_BATCH, max(16, int(1.2 * (n - have) * m) + 8))
            x = base.sample(rng, batch, lo, hi)
            u = rng.uniform(size=batch)
            ratio = np.maximum(evaluate_many(basis, coef, x)[0], 0.0) / base.pdf(x)
            if np.any(ratio > m):
                m = M_SAFETY * float(ratio.max())
                accepted, have, used = [], 0, 0
                continue
            keep = x[u * m < ratio]
            accepted.append(keep)
            have += keep.size
            used += batch
            if used >= min_proposals and have < ACCEPT_FLOOR * used:
                raise SamplerError(f"acceptance rate {have / used:.2e} below floor {ACCEPT_FLOOR:g}")
        out.append(np.concatenate(accepted)[:n])
    return out
