"""Clamped B-spline bases, least-squares fitting on the grid, evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import solve_triangular

from .base_grid import GridSpec

DEFAULT_ORDER = 4


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Clamped B-spline family with uniformly spaced interior knots.

    ``order`` is the polynomial order (degree + 1), so the default of 4 is a
    cubic basis.
    """

    order: int
    n_basis: int
    x_low: float
    x_high: float
    knots: np.ndarray = field(repr=False)

    @property
    def degree(self) -> int:
        return self.order - 1

    def key(self) -> tuple:
        return (self.order, self.n_basis, self.x_low, self.x_high)

    def __eq__(self, other):
        return isinstance(other, SplineBasis) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def design(self, x) -> np.ndarray:
        """Dense ``len(x) x n_basis`` matrix of basis values."""
        x = _check_range(self, x)
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()


@dataclass(frozen=True, eq=False)
class FittedCurve:
    """A function represented by its B-spline coefficients."""

    basis: SplineBasis
    coefficients: np.ndarray
    residual_norm: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.basis.n_basis,):
            raise ValueError(f"expected {self.basis.n_basis} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("spline coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    def __call__(self, x):
        return evaluate(self, x)


def build_basis(range_: tuple[float, float], n_basis: int, order: int = DEFAULT_ORDER) -> SplineBasis:
    """Clamped basis on ``range_`` with ``n_basis - order`` interior knots."""
    lo, hi = (float(v) for v in range_)
    if not lo < hi:
        raise ValueError(f"degenerate spline range ({lo}, {hi})")
    if order < 2:
        raise ValueError(f"spline order must be >= 2, got {order}")
    if n_basis < order:
        raise ValueError(f"n_basis ({n_basis}) must be >= order ({order})")
    n_interior = n_basis - order
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(order, lo), interior, np.full(order, hi)])
    knots.setflags(write=False)
    return SplineBasis(order=int(order), n_basis=int(n_basis), x_low=lo, x_high=hi, knots=knots)


def basis_for_grid(grid: GridSpec, n_basis: int, order: int = DEFAULT_ORDER) -> SplineBasis:
    return build_basis((grid.x_low, grid.x_high), n_basis, order)


def _check_range(basis: SplineBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * max(1.0, abs(basis.x_low), abs(basis.x_high))
    if np.any(x < basis.x_low - tol) or np.any(x > basis.x_high + tol):
        raise ValueError(f"evaluation point outside [{basis.x_low}, {basis.x_high}]")
    return np.clip(x, basis.x_low, basis.x_high)


@lru_cache(maxsize=64)
def _factor(basis: SplineBasis, grid_key: tuple, psi_bytes: bytes):
    psi = np.frombuffer(psi_bytes, dtype=float)
    design = basis.design(psi)
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * diag.max():
        raise np.linalg.LinAlgError(
            f"rank-deficient spline design: k={len(psi)} points for {basis.n_basis} basis functions"
        )
    return design, q, r


def grid_factor(basis: SplineBasis, grid: GridSpec):
    """Cached ``(design, Q, R)`` for the basis evaluated on the grid."""
    if grid.k < basis.n_basis:
        raise np.linalg.LinAlgError(f"grid size {grid.k} smaller than n_basis {basis.n_basis}")
    return _factor(basis, grid.key(), np.ascontiguousarray(grid.psi).tobytes())


def fit_coefficients(grid: GridSpec, values, basis: SplineBasis) -> np.ndarray:
    """Least-squares coefficients for one or many grid-sampled functions.

    ``values`` has shape ``(..., k)``; the result has shape ``(..., n_basis)``.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[-1:] != (grid.k,):
        raise ValueError(f"expected trailing length {grid.k}, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    _, q, r = grid_factor(basis, grid)
    flat = values.reshape(-1, grid.k).T
    coef = solve_triangular(r, q.T @ flat)
    return coef.T.reshape(values.shape[:-1] + (basis.n_basis,))


def fit_least_squares(grid: GridSpec, values, basis: SplineBasis) -> FittedCurve:
    """Fit a single grid-sampled function; the residual norm is kept on the curve."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("fit_least_squares takes one vector; use fit_coefficients for batches")
    coef = fit_coefficients(grid, values, basis)
    design = grid_factor(basis, grid)[0]
    resid = float(np.linalg.norm(design @ coef - values))
    return FittedCurve(basis, coef, resid)


def on_grid(grid: GridSpec, coefficients, basis: SplineBasis) -> np.ndarray:
    """Evaluate coefficient arrays ``(..., n_basis)`` at every grid point."""
    design = grid_factor(basis, grid)[0]
    return np.asarray(coefficients) @ design.T


def smooth_on_grid(grid: GridSpec, values, basis: SplineBasis) -> np.ndarray:
    """Project grid values onto the spline space and return the projection."""
    return on_grid(grid, fit_coefficients(grid, values, basis), basis)


def evaluate(curve: FittedCurve, x):
    """De Boor evaluation at ``x`` (scalar or array) inside the basis range."""
    basis = curve.basis
    xs = _check_range(basis, x)
    out = BSpline(basis.knots, curve.coefficients, basis.degree, extrapolate=False)(xs)
    return float(out) if np.ndim(out) == 0 else out


def evaluate_many(basis: SplineBasis, coefficients, x) -> np.ndarray:
    """Evaluate several curves sharing a basis: ``(m, n_basis)`` -> ``(m, len(x))``."""
    xs = _check_range(basis, x)
    coefficients = np.asarray(coefficients, dtype=float)
    spl = BSpline(basis.knots, coefficients.T, basis.degree, extrapolate=False)
    return np.asarray(spl(xs)).T
