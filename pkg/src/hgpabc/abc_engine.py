"""Rejection ABC over the hierarchical prior.

Every simulation ``t`` owns a random stream derived from ``(seed, t,
attempt)``, so a record can be regenerated on demand and the outcome does
not depend on how many worker threads produced it. The engine keeps only
divergences during the sweep and rebuilds the accepted records afterwards.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .base_grid import BaseDensity, GridSpec
from .gp_prior import (DegenerateDraw, HierarchySpec, HyperPrior, PriorDraw, SamplerError,
                       refinement, sample_prior_draw, simulate_groups)
from .splines import DEFAULT_ORDER, SplineBasis, basis_for_grid, fit_coefficients
from .summaries import KdeSummary, divergence, epanechnikov_weight, summarize

log = logging.getLogger(__name__)

_SIM_STREAM = 0


class AbcError(RuntimeError):
    """The ABC sweep could not produce a usable accepted set."""


@dataclass(frozen=True, eq=False)
class AbcConfig:
    base: BaseDensity
    grid: GridSpec
    hierarchy: HierarchySpec
    hyperprior: HyperPrior
    n_sims: int
    m_accept: int
    seed: int = 0
    n_basis: int = 50
    order: int = DEFAULT_ORDER
    threads: int = 1
    max_retries: int = 100

    def __post_init__(self):
        if not 1 <= self.m_accept <= self.n_sims:
            raise ValueError(f"need 1 <= m_accept <= n_sims, got m_accept={self.m_accept}, n_sims={self.n_sims}")
        if len(self.hyperprior.levels) != self.hierarchy.levels:
            raise ValueError("hyperprior and hierarchy disagree on the number of levels")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @cached_property
    def basis(self) -> SplineBasis:
        return basis_for_grid(self.grid, self.n_basis, self.order)

    @cached_property
    def x_dense(self) -> np.ndarray:
        return refinement(self.grid)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a spawn key under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True, eq=False)
class SimulationRecord:
    index: int
    draw: PriorDraw = field(repr=False)
    data: tuple[np.ndarray, ...] = field(repr=False)
    summary: KdeSummary = field(repr=False)
    divergence: float
    weight: float | None = None
    retries: int = 0


@dataclass(frozen=True, eq=False)
class AcceptedSet:
    """Accepted records in simulation-index order, with their weights."""

    records: tuple[SimulationRecord, ...]
    delta: float
    observed: KdeSummary = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records])

    @property
    def divergences(self) -> np.ndarray:
        return np.array([r.divergence for r in self.records])

    @property
    def indices(self) -> np.ndarray:
        return np.array([r.index for r in self.records])

    def leaf_latents(self) -> np.ndarray:
        """``(m, g, k)`` stack of accepted leaf latents."""
        return np.stack([r.draw.leaf_latent for r in self.records])

    def norm_consts(self) -> np.ndarray:
        return np.stack([r.draw.norm_consts for r in self.records])

    def sim_log_kde(self) -> np.ndarray:
        return np.stack([r.summary.log_values for r in self.records])


def _check_observed(observed: Sequence[np.ndarray]) -> list[np.ndarray]:
    groups = [np.asarray(x, dtype=float).ravel() for x in observed]
    if len(groups) < 2:
        raise ValueError(f"ABC needs at least two groups, got {len(groups)}")
    for i, x in enumerate(groups):
        if x.size < 1:
            raise ValueError(f"group {i} is empty")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"group {i} has non-finite observations")
    return groups


def observed_summary(config: AbcConfig, observed: Sequence[np.ndarray]) -> KdeSummary:
    return summarize(_check_observed(observed), config.grid, config.basis)


def simulate_record(config: AbcConfig, sizes: Sequence[int], obs: KdeSummary, index: int) -> SimulationRecord:
    """Regenerate simulation ``index`` exactly, retrying failed attempts on fresh substreams."""
    if len(sizes) != config.hierarchy.n_groups:
        raise ValueError(f"{len(sizes)} groups observed but hierarchy has {config.hierarchy.n_groups}")
    last_err: Exception | None = None
    for attempt in range(config.max_retries + 1):
        rng = stream(config.seed, _SIM_STREAM, index, attempt)
        try:
            draw = sample_prior_draw(config.hierarchy, config.hyperprior, config.grid, config.base, rng)
            coef = fit_coefficients(config.grid, draw.density_grids, config.basis)
            data = simulate_groups(config.basis, coef, config.base, sizes, rng, config.x_dense)
            summary = summarize(data, config.grid, config.basis)
            d = divergence(obs, summary, config.grid)
        except (DegenerateDraw, SamplerError, np.linalg.LinAlgError) as err:
            last_err = err
            log.warning("event=retry sim=%d attempt=%d error=%s", index, attempt, err)
            continue
        return SimulationRecord(index, draw, tuple(data), summary, d, retries=attempt)
    raise AbcError(f"simulation {index} failed {config.max_retries + 1} times: {last_err}")


def run_simulations(config: AbcConfig, observed: Sequence[np.ndarray]) -> Iterator[SimulationRecord]:
    """Yield all ``n_sims`` records in index order, weights unset."""
    groups = _check_observed(observed)
    sizes = [x.size for x in groups]
    obs = summarize(groups, config.grid, config.basis)
    _ = (config.basis, config.x_dense)  # build cached members before threads share them

    def one(t: int) -> SimulationRecord:
        return simulate_record(config, sizes, obs, t)

    if config.threads == 1:
        for t in range(config.n_sims):
            yield one(t)
        return
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        yield from pool.map(one, range(config.n_sims), chunksize=1)


def accepted_order(divergences, m_accept: int) -> np.ndarray:
    """Indices of the ``m_accept`` smallest divergences, ties by lower index."""
    d = np.asarray(divergences, dtype=float)
    if d.size == 0:
        raise ValueError("no divergences to threshold")
    if not 1 <= m_accept <= d.size:
        raise ValueError(f"m_accept={m_accept} outside [1, {d.size}]")
    return np.argsort(d, kind="stable")[:m_accept]


def select_threshold(divergences, m_accept: int) -> float:
    """The ``m_accept``-th smallest divergence."""
    order = accepted_order(divergences, m_accept)
    return float(np.asarray(divergences, dtype=float)[order[-1]])


def accept_and_weight(records: Sequence[SimulationRecord], delta: float,
                      m_accept: int | None = None) -> AcceptedSet:
    """Keep records with ``D <= delta`` (at most ``m_accept``, ties by index) and weight them."""
    ranked = sorted(records, key=lambda r: (r.divergence, r.index))
    kept = [r for r in ranked if r.divergence <= delta]
    if m_accept is not None:
        kept = kept[:m_accept]
    if not kept:
        raise AbcError(f"no record within threshold {delta}")
    if delta > 0:
        w = epanechnikov_weight([r.divergence for r in kept], delta)
    else:
        w = np.ones(len(kept))
    if not np.any(w > 0):
        raise AbcError("every accepted record sits on the threshold; all weights are zero")
    weighted = [replace(r, weight=float(wi)) for r, wi in zip(kept, w)]
    weighted.sort(key=lambda r: r.index)
    return AcceptedSet(tuple(weighted), float(delta), observed=None)


def run_abc(config: AbcConfig, observed: Sequence[np.ndarray]) -> AcceptedSet:
    """Full rejection sweep: simulate, threshold at the ``m_accept``-th divergence, weight."""
    groups = _check_observed(observed)
    sizes = [x.size for x in groups]
    obs = summarize(groups, config.grid, config.basis)
    divs = np.empty(config.n_sims)
    retries = 0
    for rec in run_simulations(config, groups):
        divs[rec.index] = rec.divergence
        retries += rec.retries
    order = accepted_order(divs, config.m_accept)
    delta = float(divs[order[-1]])
    q = np.quantile(divs, [0.0, 0.01, 0.1, 0.5, 0.9, 1.0])
    log.info("event=sweep n_sims=%d retries=%d delta=%.6g d_q=%s", config.n_sims, retries, delta,
             ",".join(f"{v:.6g}" for v in q))
    kept = [simulate_record(config, sizes, obs, int(t)) for t in np.sort(order)]
    for rec in kept:
        if rec.divergence != divs[rec.index]:
            raise AbcError(f"simulation {rec.index} did not regenerate identically")
    acc = accept_and_weight(kept, delta, config.m_accept)
    diag = {
        "n_sims": config.n_sims,
        "m_accept": config.m_accept,
        "retries": retries,
        "delta": delta,
        "divergence_quantiles": {p: float(v) for p, v in zip(("0", "0.01", "0.1", "0.5", "0.9", "1"), q)},
    }
    return replace(acc, observed=obs, diagnostics=diag)
