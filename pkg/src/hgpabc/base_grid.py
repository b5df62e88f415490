"""Base densities, the quantile-derived evaluation grid and grid quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

DEFAULT_BETA = 0.001

_FAMILIES = ("uniform", "normal")


@dataclass(frozen=True)
class BaseDensity:
    """Parametric base density ``b(x | phi)``.

    Parameters
    ----------
    family : {"uniform", "normal"}
    params : tuple of float
        ``(lower, upper)`` for the uniform family, ``(mean, variance)`` for
        the normal family.
    """

    family: str
    params: tuple[float, float]

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown base family {self.family!r}; expected one of {_FAMILIES}")
        if len(self.params) != 2:
            raise ValueError(f"{self.family} base takes two parameters, got {len(self.params)}")
        a, b = (float(p) for p in self.params)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("base parameters must be finite")
        if self.family == "uniform" and not a < b:
            raise ValueError(f"uniform base needs lower < upper, got ({a}, {b})")
        if self.family == "normal" and not b > 0:
            raise ValueError(f"normal base needs variance > 0, got {b}")
        object.__setattr__(self, "params", (a, b))

    @classmethod
    def uniform(cls, lower: float = 0.0, upper: float = 1.0) -> "BaseDensity":
        return cls("uniform", (lower, upper))

    @classmethod
    def normal(cls, mean: float = 0.0, variance: float = 1.0) -> "BaseDensity":
        return cls("normal", (mean, variance))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.params
        if self.family == "uniform":
            return np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0)
        sd = math.sqrt(b)
        z = (x - a) / sd
        return np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.params
        if self.family == "uniform":
            return np.clip((x - a) / (b - a), 0.0, 1.0)
        return ndtr((x - a) / math.sqrt(b))

    def quantile(self, p: float, tol: float = 1e-12) -> float:
        """Inverse CDF. The normal family is inverted by bisection."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        a, b = self.params
        if self.family == "uniform":
            return a + p * (b - a)
        if p in (0.0, 1.0):
            return -math.inf if p == 0.0 else math.inf
        sd = math.sqrt(b)
        lo, hi = a - 40.0 * sd, a + 40.0 * sd
        while hi - lo > tol * max(1.0, abs(a), sd):
            mid = 0.5 * (lo + hi)
            if float(self.cdf(mid)) < p:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def sample(self, rng: np.random.Generator, size: int, low: float, high: float) -> np.ndarray:
        """Draw from the base density truncated to ``[low, high]``."""
        if self.family == "uniform":
            a, b = self.params
            return rng.uniform(max(a, low), min(b, high), size)
        u = rng.uniform(float(self.cdf(low)), float(self.cdf(high)), size)
        mean, var = self.params
        return np.clip(mean + math.sqrt(var) * ndtri(u), low, high)


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Regular grid ``psi_1 < ... < psi_k`` on ``[x_low, x_high]``."""

    beta: float
    k: int
    x_low: float
    x_high: float
    psi: np.ndarray = field(repr=False)

    @property
    def step(self) -> float:
        return (self.x_high - self.x_low) / (self.k - 1)

    @property
    def width(self) -> float:
        return self.x_high - self.x_low

    def key(self) -> tuple:
        return (self.k, self.x_low, self.x_high)

    def __eq__(self, other):
        return isinstance(other, GridSpec) and self.key() == other.key() and self.beta == other.beta

    def __hash__(self):
        return hash(self.key())


def quantile_bounds(base: BaseDensity, beta: float) -> tuple[float, float]:
    """Lower and upper ``beta``-quantiles of the base density."""
    if not 0.0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 0.5), got {beta}")
    x_low = base.quantile(beta)
    x_high = base.quantile(1.0 - beta)
    if not x_low < x_high:
        raise ValueError(f"degenerate quantile bounds ({x_low}, {x_high}) for beta={beta}")
    return x_low, x_high


def build_grid(base: BaseDensity, beta: float, k: int) -> GridSpec:
    """Equally spaced grid of ``k`` points between the base ``beta``-quantiles.

    ``beta = 0`` is accepted for the uniform family only, giving the full
    support as the grid range.
    """
    if int(k) != k or k < 2:
        raise ValueError(f"grid size k must be an integer >= 2, got {k}")
    k = int(k)
    if beta == 0.0 and base.family == "uniform":
        x_low, x_high = base.params
    else:
        x_low, x_high = quantile_bounds(base, beta)
    j = np.arange(k, dtype=float)
    psi = x_low + (x_high - x_low) * j / (k - 1)
    psi[-1] = x_high
    psi.setflags(write=False)
    return GridSpec(beta=float(beta), k=k, x_low=float(x_low), x_high=float(x_high), psi=psi)


def default_beta(base: BaseDensity) -> float:
    return 0.0 if base.family == "uniform" else DEFAULT_BETA


def trapezoid_integrate(grid: GridSpec, values) -> float | np.ndarray:
    """Composite trapezoid rule over the grid.

    ``values`` may carry leading batch axes; integration runs over the last
    axis, which must have length ``k``.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[-1:] != (grid.k,):
        raise ValueError(f"expected trailing length {grid.k}, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    h = grid.step
    out = h * (values.sum(axis=-1) - 0.5 * (values[..., 0] + values[..., -1]))
    return float(out) if out.ndim == 0 else out
