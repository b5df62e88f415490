"""Hierarchical Gaussian-process density estimation for grouped data.

Densities are modelled through logistic-transformed Gaussian-process
latents arranged in a hierarchy; inference is rejection ABC on kernel
density summaries followed by a functional regression adjustment.
"""

from .abc_engine import AbcConfig, AcceptedSet, run_abc
from .base_grid import BaseDensity, GridSpec, build_grid, trapezoid_integrate
from .func_reg import regression_adjust
from .gp_prior import CovParams, Gamma, HierarchySpec, HyperPrior, sample_prior_draw
from .io import DatasetTable, RunConfig, ingest, load_config
from .pipeline import run_estimate, run_simstudy
from .posterior import densities_from_adjusted, rank_distribution, summarize_density

__all__ = [
    "AbcConfig", "AcceptedSet", "BaseDensity", "CovParams", "DatasetTable", "Gamma", "GridSpec",
    "HierarchySpec", "HyperPrior", "RunConfig", "build_grid", "densities_from_adjusted", "ingest",
    "load_config", "rank_distribution", "regression_adjust", "run_abc", "run_estimate",
    "run_simstudy", "sample_prior_draw", "summarize_density", "trapezoid_integrate",
]

__version__ = "0.1.0"
