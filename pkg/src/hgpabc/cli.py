"""Command-line entry point: ``estimate``, ``simstudy`` and ``validate``."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .abc_engine import AbcError
from .gp_prior import DegenerateDraw, SamplerError
from .io import MAX_SEED, ValidationError, ingest, load_config
from .pipeline import run_estimate, run_simstudy

EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("hgpabc")


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64 - 1], got {v}")
    return v


def _threads(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgpabc",
        description="Hierarchical Gaussian-process density estimation for grouped data by ABC.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data: bool):
        p.add_argument("--config", help="flat 'key = value' run configuration")
        if data:
            p.add_argument("--data", required=True, help="CSV with header group[,region],value")
        p.add_argument("--seed", type=_seed, help="override the configured seed")
        p.add_argument("--levels", type=int, choices=(2, 3), help="hierarchy depth (selects defaults)")

    p = sub.add_parser("estimate", help="run the full ABC estimation on a dataset")
    common(p, data=True)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=_threads, default=1, help="worker threads; results do not depend on it")

    p = sub.add_parser("simstudy", help="seeded simulation study against prior-drawn true densities")
    common(p, data=False)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=_threads, default=1)

    p = sub.add_parser("validate", help="check the configuration (and data, if given) without simulating")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--levels", type=int, choices=(2, 3))
    return parser


def _load(args):
    cfg = load_config(args.config, args.levels)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    return cfg.validate()


def _run(args) -> int:
    cfg = _load(args)
    if args.command == "validate":
        msg = f"config ok: levels={cfg.levels} base={cfg.base_family}{cfg.base_params} k={cfg.k}"
        if args.data:
            table = ingest(args.data)
            cfg.hierarchy_for(table)
            msg += f"; data ok: g={table.g} sizes={list(table.sizes)}"
        print(msg)
        return 0
    if args.command == "estimate":
        table = ingest(args.data)
        cfg.hierarchy_for(table)
        digest = hashlib.sha256(Path(args.data).read_bytes()).hexdigest()
        result = run_estimate(cfg, table, cfg.output_dir, args.threads, input_sha256=digest)
    else:
        result = run_simstudy(cfg, cfg.output_dir, args.threads)
    m = result.manifest
    print(f"wrote {cfg.output_dir}: delta={m['delta']:.6g} ess={m['effective_sample_size']:.1f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s %(message)s",
                        stream=sys.stderr)
    try:
        return _run(args)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (AbcError, DegenerateDraw, SamplerError, np.linalg.LinAlgError, ArithmeticError, ValueError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
