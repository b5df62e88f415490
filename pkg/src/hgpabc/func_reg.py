"""Functional regression adjustment of accepted latent curves.

For each group the accepted latents are regressed, point by point on the
grid, on the group's own log-KDE and on pooled log-KDEs of related groups.
The pointwise coefficients are smoothed into spline curves, and each latent
is shifted by the fitted effect of the gap between its simulated summaries
and the observed ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .abc_engine import AcceptedSet
from .base_grid import BaseDensity, GridSpec
from .gp_prior import HierarchySpec
from .splines import SplineBasis, fit_coefficients, on_grid

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
RIDGE_SCALE = 1e-8
# log(1 / (1 + e^-z)) differs from z by under 1e-4 only below this value.
LINEAR_LOGISTIC_LIMIT = -10.0


@dataclass(frozen=True, eq=False)
class RegressorSet:
    """Regression inputs for the accepted records.

    ``predictors`` has shape ``(m, g, p, k)``; predictor 0 is the group's own
    log-KDE, the rest are pooled terms named in ``names``. ``obs_predictors``
    is the same construction from the observed summaries, ``(g, p, k)``.
    """

    offset: np.ndarray = field(repr=False)
    predictors: np.ndarray = field(repr=False)
    obs_predictors: np.ndarray = field(repr=False)
    names: tuple[str, ...]

    @property
    def n_predictors(self) -> int:
        return self.predictors.shape[2]


@dataclass(frozen=True, eq=False)
class CoeffEstimates:
    """Coefficient estimates, intercept first along axis 1.

    ``pointwise`` holds the raw grid-by-grid least-squares solutions,
    ``smoothed`` their spline projections on the grid (``curves`` holds the
    spline coefficients). ``ridge_points`` flags grid points where the
    design was rank deficient.
    """

    pointwise: np.ndarray = field(repr=False)
    smoothed: np.ndarray = field(repr=False)
    curves: np.ndarray = field(repr=False)
    resid_var: np.ndarray = field(repr=False)
    ridge_points: np.ndarray = field(repr=False)
    names: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class AdjustedEnsemble:
    latent: np.ndarray = field(repr=False)
    weights: np.ndarray
    indices: np.ndarray
    coefficients: np.ndarray | None = field(default=None, repr=False)


def _mean_of_others(log_kde: np.ndarray) -> np.ndarray:
    g = log_kde.shape[-2]
    out = np.empty_like(log_kde)
    for i in range(g):
        others = [h for h in range(g) if h != i]
        out[..., i, :] = log_kde[..., others, :].sum(axis=-2) / (g - 1)
    return out


def pooled_predictors(log_kde: np.ndarray, hierarchy: HierarchySpec) -> tuple[np.ndarray, tuple[str, ...]]:
    """Stack own and pooled log-KDE regressors: ``(..., g, k) -> (..., g, p, k)``.

    Two levels pool over all other groups. Three levels use the mean over
    the group's region and the mean of the regional means.
    """
    log_kde = np.asarray(log_kde, dtype=float)
    g = log_kde.shape[-2]
    if g != hierarchy.n_groups:
        raise ValueError(f"{g} groups of summaries for a hierarchy of {hierarchy.n_groups}")
    if g < 2:
        raise ValueError("pooled regressors need at least two groups")
    if hierarchy.levels == 2:
        return np.stack([log_kde, _mean_of_others(log_kde)], axis=-2), ("own", "others")
    if hierarchy.levels == 3:
        region_of = hierarchy.parent_maps[0]
        n_regions = region_of.max() + 1
        regional = np.stack(
            [log_kde[..., region_of == r, :].mean(axis=-2) for r in range(n_regions)], axis=-2
        )
        country = regional.mean(axis=-2, keepdims=True)
        in_region = regional[..., region_of, :]
        country_b = np.broadcast_to(country, log_kde.shape)
        return np.stack([log_kde, in_region, country_b], axis=-2), ("own", "region", "country")
    raise NotImplementedError(f"regression adjustment for {hierarchy.levels} levels")


def offset_grid(norm_consts: np.ndarray, base: BaseDensity, grid: GridSpec) -> np.ndarray:
    """``log(c / b(psi))`` per record and group, so that latent minus offset ~ log density."""
    c = np.asarray(norm_consts, dtype=float)
    return np.log(c)[..., None] - np.log(base.pdf(grid.psi))


def build_regressors(accepted: AcceptedSet, hierarchy: HierarchySpec, grid: GridSpec,
                     base: BaseDensity) -> RegressorSet:
    sim_pred, names = pooled_predictors(accepted.sim_log_kde(), hierarchy)
    obs_pred, _ = pooled_predictors(accepted.observed.log_values, hierarchy)
    offset = offset_grid(accepted.norm_consts(), base, grid)
    return RegressorSet(offset, sim_pred, obs_pred, names)


def _solve_point(x: np.ndarray, y: np.ndarray, sw: np.ndarray) -> tuple[np.ndarray, bool]:
    xw = x * sw[:, None]
    yw = y * sw
    beta, _, _, s = np.linalg.lstsq(xw, yw, rcond=None)
    if s.size == x.shape[1] and s[-1] > RANK_TOL * s[0]:
        return beta, False
    a = xw.T @ xw
    lam = RIDGE_SCALE * np.trace(a) / a.shape[0]
    return np.linalg.solve(a + lam * np.eye(a.shape[0]), xw.T @ yw), True


def fit_functional_regression(regressors: RegressorSet, responses: np.ndarray, weights: np.ndarray,
                              grid: GridSpec, basis: SplineBasis) -> CoeffEstimates:
    """Pointwise weighted least squares per group, then spline smoothing of each coefficient."""
    responses = np.asarray(responses, dtype=float)
    w = np.asarray(weights, dtype=float)
    m, g, p, k = regressors.predictors.shape
    if responses.shape != (m, g, k):
        raise ValueError(f"responses shape {responses.shape} does not match regressors {(m, g, k)}")
    if w.shape != (m,):
        raise ValueError(f"weights shape {w.shape} does not match {m} records")
    active = w > 0
    if active.sum() < p + 3:
        raise ValueError(f"need at least {p + 3} positively weighted records, got {int(active.sum())}")
    y_all = (responses - regressors.offset)[active]
    pred = regressors.predictors[active]
    sw = np.sqrt(w[active])
    wn = w[active] / w[active].sum()
    pointwise = np.empty((g, p + 1, k))
    resid_var = np.empty((g, k))
    ridge = np.zeros((g, k), dtype=bool)
    ones = np.ones(pred.shape[0])
    for i in range(g):
        for j in range(k):
            x = np.column_stack([ones, pred[:, i, :, j]])
            beta, flagged = _solve_point(x, y_all[:, i, j], sw)
            pointwise[i, :, j] = beta
            ridge[i, j] = flagged
            r = y_all[:, i, j] - x @ beta
            resid_var[i, j] = float(wn @ (r * r))
    if ridge.any():
        log.warning("event=ridge_fallback points=%d", int(ridge.sum()))
    curves = fit_coefficients(grid, pointwise, basis)
    smoothed = on_grid(grid, curves, basis)
    return CoeffEstimates(pointwise, smoothed, curves, resid_var, ridge,
                          ("intercept",) + regressors.names)


def fitted_values(coeffs: CoeffEstimates, regressors: RegressorSet, smoothed: bool = False) -> np.ndarray:
    """Model prediction ``offset + gamma_0 + sum_r gamma_r * predictor_r``, ``(m, g, k)``."""
    gam = coeffs.smoothed if smoothed else coeffs.pointwise
    lin = np.einsum("grk,mgrk->mgk", gam[:, 1:, :], regressors.predictors)
    return regressors.offset + gam[None, :, 0, :] + lin


def residuals(coeffs: CoeffEstimates, regressors: RegressorSet, responses: np.ndarray) -> np.ndarray:
    """Per-record residual grids against the pointwise least-squares fit."""
    return np.asarray(responses, dtype=float) - fitted_values(coeffs, regressors)


def adjust(responses: np.ndarray, coeffs: CoeffEstimates, sim_predictors: np.ndarray,
           obs_predictors: np.ndarray, weights: np.ndarray | None = None,
           indices: np.ndarray | None = None, grid: GridSpec | None = None,
           basis: SplineBasis | None = None) -> AdjustedEnsemble:
    """Shift latents by ``sum_r gamma_r (sim_r - obs_r)`` over the non-intercept terms.

    Uses the smoothed coefficient curves. The intercept and offset do not
    enter, so a record whose summaries equal the observed ones is returned
    unchanged.
    """
    responses = np.asarray(responses, dtype=float)
    sim_predictors = np.asarray(sim_predictors, dtype=float)
    obs_predictors = np.asarray(obs_predictors, dtype=float)
    m, g, k = responses.shape
    if sim_predictors.shape[:2] != (m, g) or sim_predictors.shape[-1] != k:
        raise ValueError(f"simulated predictors shape {sim_predictors.shape} does not match responses")
    if obs_predictors.shape != sim_predictors.shape[1:]:
        raise ValueError(f"observed predictors shape {obs_predictors.shape} does not match")
    gam = coeffs.smoothed[:, 1:, :]
    if gam.shape != sim_predictors.shape[1:]:
        raise ValueError(f"coefficient shape {gam.shape} does not match predictors")
    diff = sim_predictors - obs_predictors[None]
    shift = np.einsum("grk,mgrk->mgk", gam, diff)
    adjusted = responses - shift
    if np.any(adjusted > LINEAR_LOGISTIC_LIMIT):
        log.warning("event=adjusted_above_linear_range max=%.4g limit=%g",
                    float(adjusted.max()), LINEAR_LOGISTIC_LIMIT)
    coef = fit_coefficients(grid, adjusted, basis) if grid is not None and basis is not None else None
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    idx = np.arange(m) if indices is None else np.asarray(indices)
    return AdjustedEnsemble(adjusted, w, idx, coef)


def regression_adjust(accepted: AcceptedSet, hierarchy: HierarchySpec, grid: GridSpec,
                      base: BaseDensity, basis: SplineBasis):
    """Build regressors, fit, and adjust the accepted latents in one step."""
    reg = build_regressors(accepted, hierarchy, grid, base)
    z = accepted.leaf_latents()
    coeffs = fit_functional_regression(reg, z, accepted.weights, grid, basis)
    adj = adjust(z, coeffs, reg.predictors, reg.obs_predictors, accepted.weights,
                 accepted.indices, grid, basis)
    return reg, coeffs, adj
