"""Command-line entry point.

Subcommands: meta-train, train, ablate, plot, inspect-checkpoint.
Exit status: 0 success, 1 divergence, 2 config error.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError, describe_checkpoint
from .harness import (ConfigError, apply_overrides, load_config,
                      run_experiment)
from .optimizers import DivergenceError
from .plots import emit_plot

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2


def _add_run_flags(p):
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--optimizer", help="override the configured optimizer")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override (repeatable)")


def build_parser():
    ap = argparse.ArgumentParser(prog="natgrad")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for mode in ("meta-train", "train", "ablate"):
        _add_run_flags(sub.add_parser(mode))
    pp = sub.add_parser("plot")
    pp.add_argument("csvs", nargs="+", help="metrics CSV files")
    pp.add_argument("--metric", action="append", required=True,
                    help="metric column to chart (repeatable)")
    pp.add_argument("--out", default="out")
    pp.add_argument("--log-time", action="store_true")
    ip = sub.add_parser("inspect-checkpoint")
    ip.add_argument("path")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "plot":
        try:
            written = emit_plot(args.csvs, args.metric, args.out,
                                log_time=args.log_time)
        except (OSError, ValueError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        for w in written:
            print(w)
        return EXIT_OK
    if args.cmd == "inspect-checkpoint":
        try:
            print(describe_checkpoint(args.path), end="")
        except (OSError, CheckpointError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.override)
        if args.optimizer:
            cfg["optimizer"] = args.optimizer
        if args.steps is not None:
            cfg["steps"] = args.steps
        paths = run_experiment(cfg, args.cmd, args.out, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
