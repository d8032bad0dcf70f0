"""Command-line front end.

    metricflow <experiment> --config cfg.json [--seed N] [--out DIR]
    metricflow validate --config cfg.json

Exit codes: 0 success, 2 invalid configuration or violated precondition,
3 solver failure.  METRICFLOW_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigError, SolverFailure
from .experiments import run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metricflow",
        description="Numerical experiments on transport geometries for Riemannian metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    val = sub.add_parser("validate", help="check a config file against the schema")
    val.add_argument("--config", required=True, help="path to the JSON config")

    for name in EXPERIMENTS:
        exp = sub.add_parser(name, help=f"run the {name} experiment")
        exp.add_argument("--config", required=True, help="path to the JSON config")
        exp.add_argument("--seed", type=int, default=None, help="override the config seed")
        exp.add_argument("--out", default=None, help="output directory for artifacts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"config ok: experiment={cfg.experiment} seed={cfg.seed}")
            return 0
        if cfg.experiment != args.command:
            raise ConfigError(
                f"config is for experiment {cfg.experiment!r} but "
                f"{args.command!r} was requested"
            )
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_path=args.out)
        manifest, paths = run_experiment(cfg, out_dir=args.out)
        print(f"wrote {paths['manifest']}")
        print(f"wrote {paths['csv']}")
        for key, path in paths.items():
            if key not in ("manifest", "csv"):
                print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
