"""Kernel density summaries, the log-KDE divergence and Epanechnikov weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .base_grid import GridSpec
from .splines import SplineBasis, fit_coefficients, on_grid

LOG_FLOOR = 1e-12
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def bandwidth(data) -> float:
    """Normal-reference bandwidth ``sd * (4 / (3 n))**(1/5)``.

    Uses the ``n - 1`` standard deviation. Raises ``ValueError`` for fewer
    than two points or zero spread.
    """
    x = np.asarray(data, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError(f"bandwidth needs at least two observations, got {n}")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise ValueError("bandwidth undefined for zero-variance data")
    return sd * (4.0 / (3.0 * n)) ** 0.2


def floored_bandwidth(data, grid: GridSpec) -> float:
    """Bandwidth with the pipeline's floor of ``1e-3`` times the grid width."""
    floor = 1e-3 * grid.width
    try:
        return max(bandwidth(data), floor)
    except ValueError:
        return floor


def kde_on_grid(data, h: float, grid: GridSpec | np.ndarray) -> np.ndarray:
    """Gaussian-kernel density estimate evaluated at the grid points."""
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("kde needs at least one observation")
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    psi = grid.psi if isinstance(grid, GridSpec) else np.asarray(grid, dtype=float)
    u = (psi[:, None] - x[None, :]) / h
    return np.exp(-0.5 * u * u).sum(axis=1) * (_INV_SQRT_2PI / (x.size * h))


@dataclass(frozen=True, eq=False)
class KdeSummary:
    """KDE summaries for all ``g`` groups of one dataset.

    ``values`` are the raw grid KDEs ``(g, k)``; ``coefficients`` the spline
    fits of those grids; ``log_values`` the floored log of the fitted
    curves on the grid, which feed the regression adjustment.
    """

    bandwidths: np.ndarray
    values: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    log_values: np.ndarray = field(repr=False)

    @property
    def n_groups(self) -> int:
        return self.values.shape[0]

    def log_grid(self) -> np.ndarray:
        """Floored log of the raw grid KDEs, as used by the divergence."""
        return np.log(np.maximum(self.values, LOG_FLOOR))


def summarize(groups: Sequence[np.ndarray], grid: GridSpec, basis: SplineBasis) -> KdeSummary:
    """Per-group KDE grid, spline fit and floored log-curve."""
    h = np.array([floored_bandwidth(x, grid) for x in groups])
    values = np.stack([kde_on_grid(x, hi, grid) for x, hi in zip(groups, h)])
    coef = fit_coefficients(grid, values, basis)
    fitted = on_grid(grid, coef, basis)
    log_values = np.log(np.maximum(fitted, LOG_FLOOR))
    return KdeSummary(h, values, coef, log_values)


def divergence(obs: KdeSummary, sim: KdeSummary, grid: GridSpec | None = None) -> float:
    """Observed-density-weighted absolute log difference, summed over groups and grid."""
    if obs.values.shape != sim.values.shape:
        raise ValueError(f"summary shapes differ: {obs.values.shape} vs {sim.values.shape}")
    if grid is not None and obs.values.shape[-1] != grid.k:
        raise ValueError(f"summaries have {obs.values.shape[-1]} grid values, grid has {grid.k}")
    return divergence_from_logs(obs.log_grid(), obs.values, sim.log_grid())


def divergence_from_logs(obs_log: np.ndarray, obs_weight: np.ndarray, sim_log: np.ndarray) -> float:
    return float(np.sum(np.abs(obs_log - sim_log) * obs_weight))


def epanechnikov_weight(d, delta: float):
    """``1 - (d / delta)^2`` inside the threshold, zero outside."""
    if not delta > 0:
        raise ValueError(f"threshold delta must be positive, got {delta}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("divergences must be non-negative")
    w = np.where(d <= delta, 1.0 - (d / delta) ** 2, 0.0)
    return float(w) if w.ndim == 0 else w
