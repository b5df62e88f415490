"""Grouped-data ingest and the flat ``key = value`` run configuration."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .base_grid import BaseDensity, build_grid, default_beta
from .gp_prior import Gamma, HierarchySpec, HyperPrior, LevelPrior

MAX_SEED = 2**64 - 1


class ValidationError(ValueError):
    """Input data or configuration violates a documented invariant."""


@dataclass(frozen=True, eq=False)
class DatasetTable:
    """Grouped observations, groups in lexicographic order of their ids."""

    group_ids: tuple[str, ...]
    values: tuple[np.ndarray, ...] = field(repr=False)
    region_of_group: tuple[str, ...] | None = None

    @property
    def g(self) -> int:
        return len(self.group_ids)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(v.size) for v in self.values)

    @property
    def has_regions(self) -> bool:
        return self.region_of_group is not None

    def region_ids(self) -> tuple[str, ...]:
        if self.region_of_group is None:
            return ()
        return tuple(sorted(set(self.region_of_group)))

    def region_index(self) -> np.ndarray:
        ids = self.region_ids()
        lookup = {r: j for j, r in enumerate(ids)}
        return np.array([lookup[r] for r in self.region_of_group], dtype=int)


def ingest(path: str | Path) -> DatasetTable:
    """Read a ``group,region,value`` file (region optional) into a validated table.

    Errors name the 1-based file line of the first offending row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        for col in ("group", "value"):
            if col not in header:
                raise ValidationError(f"{path}: missing required column {col!r} in header {header}")
        extra = set(header) - {"group", "region", "value"}
        if extra:
            raise ValidationError(f"{path}: unknown columns {sorted(extra)}")
        gi, vi = header.index("group"), header.index("value")
        ri = header.index("region") if "region" in header else None

        values: dict[str, list[float]] = {}
        regions: dict[str, str] = {}
        with_region = without_region = None
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: row {line}: expected {len(header)} fields, got {len(row)}")
            group = row[gi].strip()
            if not group:
                raise ValidationError(f"{path}: row {line}: empty group id")
            try:
                value = float(row[vi])
            except ValueError:
                raise ValidationError(f"{path}: row {line}: non-numeric value {row[vi]!r}") from None
            if not math.isfinite(value):
                raise ValidationError(f"{path}: row {line}: non-finite value {row[vi]!r}")
            region = row[ri].strip() if ri is not None else ""
            if region:
                with_region = with_region or line
                if without_region:
                    raise ValidationError(f"{path}: row {without_region}: missing region while other rows have one")
                prev = regions.setdefault(group, region)
                if prev != region:
                    raise ValidationError(
                        f"{path}: row {line}: group {group!r} assigned to region {region!r}, earlier {prev!r}")
            else:
                without_region = without_region or line
                if with_region:
                    raise ValidationError(f"{path}: row {line}: missing region while other rows have one")
            values.setdefault(group, []).append(value)

    if not values:
        raise ValidationError(f"{path}: no data rows")
    ids = tuple(sorted(values))
    arrays = tuple(np.array(values[g], dtype=float) for g in ids)
    region_of = tuple(regions[g] for g in ids) if regions else None
    return DatasetTable(ids, arrays, region_of)


def write_dataset(path: str | Path, table: DatasetTable) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if table.has_regions:
            w.writerow(["group", "region", "value"])
            for gid, reg, vals in zip(table.group_ids, table.region_of_group, table.values):
                w.writerows([gid, reg, repr(float(v))] for v in vals)
        else:
            w.writerow(["group", "value"])
            for gid, vals in zip(table.group_ids, table.values):
                w.writerows([gid, repr(float(v))] for v in vals)


def table_from_groups(groups: Sequence[np.ndarray], ids: Sequence[str] | None = None,
                      regions: Sequence[str] | None = None) -> DatasetTable:
    ids = tuple(ids) if ids is not None else tuple(f"g{i + 1:02d}" for i in range(len(groups)))
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    values = tuple(np.asarray(groups[i], dtype=float) for i in order)
    reg = tuple(regions[i] for i in order) if regions is not None else None
    return DatasetTable(tuple(ids[i] for i in order), values, reg)


# --- run configuration -----------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Every experiment knob. Hyperpriors are listed leaf level first.

    A hyperprior entry is ``(shape, rate)`` for a Gamma prior or a single
    number for a fixed value.
    """

    levels: int = 2
    base_family: str = "uniform"
    base_params: tuple[float, float] = (0.0, 1.0)
    beta: float | None = None
    k: int = 100
    n_basis: int = 50
    spline_order: int = 4
    sigma_prior: tuple[tuple[float, ...], ...] = ((3.0, 5.0), (3.0, 5.0))
    alpha_prior: tuple[tuple[float, ...], ...] = ((1.0, 0.1), (1.0, 0.1))
    mean_const: float = -10.0
    n_sims: int = 50_000
    m_accept: int = 5_000
    seed: int = 0
    band_level: float = 0.95
    output_dir: str = "out"
    sim_sizes: tuple[int, ...] = tuple(range(5, 141, 15))
    write_ensemble: bool = True

    @classmethod
    def defaults(cls, levels: int = 2) -> "RunConfig":
        if levels == 2:
            return cls()
        if levels == 3:
            return cls(
                levels=3, base_family="normal", base_params=(500.0, 5000.0), k=200, n_basis=150,
                sigma_prior=((3.0, 5.0),) * 3, alpha_prior=((1.0, 10000.0),) * 3,
                n_sims=10_000, m_accept=1_000,
            )
        raise ValidationError(f"levels must be 2 or 3, got {levels}")

    @property
    def effective_beta(self) -> float:
        return default_beta(self.base()) if self.beta is None else self.beta

    def base(self) -> BaseDensity:
        return BaseDensity(self.base_family, tuple(self.base_params))

    def hyperprior(self) -> HyperPrior:
        def one(spec):
            return Gamma(*spec) if len(spec) == 2 else float(spec[0])

        return HyperPrior(tuple(LevelPrior(one(s), one(a)) for s, a in zip(self.sigma_prior, self.alpha_prior)))

    def grid(self):
        return build_grid(self.base(), self.effective_beta, self.k)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = self.effective_beta
        return d

    def validate(self) -> "RunConfig":
        """Check every invariant up front; returns ``self`` for chaining."""
        try:
            base = self.base()
        except ValueError as err:
            raise ValidationError(f"base: {err}") from None
        if self.levels not in (2, 3):
            raise ValidationError(f"levels must be 2 or 3, got {self.levels}")
        beta = self.effective_beta
        if not (0.0 < beta < 0.5 or (beta == 0.0 and base.family == "uniform")):
            raise ValidationError(f"beta must lie in (0, 0.5) (or be 0 for a uniform base), got {beta}")
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        if self.spline_order < 2:
            raise ValidationError(f"spline_order must be >= 2, got {self.spline_order}")
        if self.n_basis < self.spline_order:
            raise ValidationError(f"n_basis ({self.n_basis}) must be >= spline_order ({self.spline_order})")
        if self.k < self.n_basis:
            raise ValidationError(f"k ({self.k}) must be >= n_basis ({self.n_basis})")
        for name in ("sigma_prior", "alpha_prior"):
            specs = getattr(self, name)
            if len(specs) != self.levels:
                raise ValidationError(f"{name}: need {self.levels} levels, got {len(specs)}")
            for lvl, spec in enumerate(specs, start=1):
                if len(spec) not in (1, 2) or not all(math.isfinite(v) and v > 0 for v in spec):
                    raise ValidationError(f"{name}_{lvl}: expected 'shape, rate' or one fixed value, all > 0; got {spec}")
        if not math.isfinite(self.mean_const):
            raise ValidationError("mean_const must be finite")
        if not 1 <= self.m_accept <= self.n_sims:
            raise ValidationError(f"need 1 <= m_accept <= n_sims, got {self.m_accept} and {self.n_sims}")
        min_accept = self.levels + 4
        if self.m_accept < min_accept:
            raise ValidationError(f"m_accept must be >= {min_accept} to fit the regression adjustment")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not 0.0 < self.band_level < 1.0:
            raise ValidationError(f"band_level must lie in (0, 1), got {self.band_level}")
        if not self.sim_sizes or min(self.sim_sizes) < 1:
            raise ValidationError("sim_sizes must be a non-empty list of positive integers")
        if self.levels == 2 and len(self.sim_sizes) < 2:
            raise ValidationError("sim_sizes needs at least two groups")
        return self

    def hierarchy_for(self, table: DatasetTable) -> HierarchySpec:
        if table.g < 2:
            raise ValidationError(f"estimation needs at least two groups, got {table.g}")
        if self.levels == 2:
            return HierarchySpec.two_level(table.g, self.mean_const)
        if not table.has_regions:
            raise ValidationError("a 3-level run needs a region column in the data")
        return HierarchySpec.three_level(table.region_index(), self.mean_const)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(",", " ").split())


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SCALARS = {
    "levels": int, "base_family": str, "k": int, "n_basis": int, "spline_order": int,
    "mean_const": float, "n_sims": int, "m_accept": int, "seed": int, "band_level": float,
    "output_dir": str, "write_ensemble": _parse_bool,
}


def parse_config_text(text: str, levels: int | None = None) -> RunConfig:
    """Parse ``key = value`` lines on top of the defaults for the chosen level count.

    ``levels`` (e.g. from the command line) overrides a ``levels`` key.
    Unknown keys, duplicates and malformed values raise ``ValidationError``.
    """
    entries: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ValidationError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = (lineno, value)

    if levels is None and "levels" in entries:
        lineno, value = entries["levels"]
        try:
            levels = int(value)
        except ValueError:
            raise ValidationError(f"config line {lineno}: levels: invalid integer {value!r}") from None
    levels = 2 if levels is None else levels
    cfg = RunConfig.defaults(levels)
    entries.pop("levels", None)

    updates: dict = {}
    sigma = list(cfg.sigma_prior)
    alpha = list(cfg.alpha_prior)
    for key, (lineno, value) in entries.items():
        try:
            if key in _SCALARS:
                updates[key] = _SCALARS[key](value)
            elif key == "base_params":
                updates[key] = _floats(value)
            elif key == "beta":
                updates[key] = float(value)
            elif key == "sim_sizes":
                updates[key] = tuple(int(p) for p in value.replace(",", " ").split())
            elif key.startswith(("sigma_prior_", "alpha_prior_")):
                name, lvl = key.rsplit("_", 1)
                lvl = int(lvl)
                if not 1 <= lvl <= levels:
                    raise KeyError(key)
                target = sigma if name == "sigma_prior" else alpha
                target[lvl - 1] = _floats(value)
            else:
                raise KeyError(key)
        except KeyError:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}") from None
        except ValueError as err:
            raise ValidationError(f"config line {lineno}: {key}: {err}") from None
    if "base_family" in updates and "base_params" not in updates:
        raise ValidationError("base_family given without base_params")
    cfg = replace(cfg, sigma_prior=tuple(sigma), alpha_prior=tuple(alpha), **updates)
    return cfg.validate()


def load_config(path: str | Path | None, levels: int | None = None) -> RunConfig:
    if path is None:
        return RunConfig.defaults(2 if levels is None else levels).validate()
    return parse_config_text(Path(path).read_text(encoding="utf-8"), levels)


def format_config(cfg: RunConfig) -> str:
    """Render a config back to the flat text format (round-trips through the parser)."""
    lines = [f"levels = {cfg.levels}"]
    for f in fields(cfg):
        name = f.name
        v = getattr(cfg, name)
        if name in ("levels", "sigma_prior", "alpha_prior"):
            continue
        if name == "beta" and v is None:
            continue
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{name} = {v}")
    for name in ("sigma_prior", "alpha_prior"):
        for lvl, spec in enumerate(getattr(cfg, name), start=1):
            lines.append(f"{name}_{lvl} = " + ", ".join(repr(x) for x in spec))
    return "\n".join(lines) + "\n"
