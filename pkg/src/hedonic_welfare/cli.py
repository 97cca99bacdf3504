"""Command-line entry points.

    hedonic-welfare simulate        --config cfg.json --out DIR
    hedonic-welfare estimate        --config cfg.json --out DIR
    hedonic-welfare welfare         --config cfg.json --out DIR
    hedonic-welfare check           --config cfg.json --out DIR
    hedonic-welfare replicate-paper [--config cfg.json] --out DIR
    hedonic-welfare plot            --config cfg.json --out DIR

The output directory resolves as --out, then the HEDONIC_WELFARE_OUT
environment variable, then the config's io.out_dir, then the working
directory.  Exit codes: 0 success, 2 validation error, 3 numeric failure,
4 replication failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import (
    ChecksumError,
    ConfigError,
    DomainError,
    HedonicWelfareError,
    ParseError,
    ReplicationFailure,
    SchemaError,
)
from .pipeline import (
    load_config,
    run_check,
    run_estimate,
    run_plot,
    run_replicate,
    run_simulate,
    run_welfare,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_REPLICATION = 4

_VALIDATION_ERRORS = (ConfigError, SchemaError, ParseError, DomainError, ValueError)
_REPLICATION_ERRORS = (ReplicationFailure, ChecksumError)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hedonic-welfare",
        description="Welfare effects of hedonic budget-frontier changes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("simulate", True),
        ("estimate", True),
        ("welfare", True),
        ("check", True),
        ("replicate-paper", False),
        ("plot", True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, default=None,
                       help="path to the run configuration JSON")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def _resolve_out(args, config):
    if args.out:
        return args.out
    env = os.environ.get("HEDONIC_WELFARE_OUT")
    if env:
        return env
    if config is not None and config.out_dir:
        return config.out_dir
    return "."


def _print_replication(report):
    taus = (0.25, 0.50, 0.75)
    print("CV matrix (computed | benchmark | residual), GBP/week")
    incomes = report["calibrated_incomes_gbp_week"]
    print("calibrated income columns:", "  ".join(f"{y:.2f}" for y in incomes))
    for i, tau in enumerate(taus):
        cells = []
        for j in range(len(incomes)):
            cells.append(
                f"{report['cv_matrix'][i][j]:8.4f} | {report['benchmark'][i][j]:8.4f} | "
                f"{report['residuals'][i][j]:+8.5f}"
            )
        print(f"  tau={tau:.2f}:  " + "    ".join(cells))
    print(f"max |residual| = {report['max_abs_residual_gbp']:.5f} GBP "
          f"(tolerance {report['residual_tolerance_gbp']} GBP)")
    for name, value in report["patterns"].items():
        print(f"  pattern {name}: {'ok' if value else 'FAILED'}")


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else None
        out_dir = _resolve_out(args, config)

        if args.command == "simulate":
            manifest = run_simulate(config, out_dir)
            print(f"simulate: wrote households.csv ({manifest['stages']['simulate']['used']} rows, "
                  f"{manifest['stages']['simulate']['dropped']} dropped) in {out_dir}")
        elif args.command == "estimate":
            manifest = run_estimate(config, out_dir)
            print(f"estimate: wrote markets.csv and demand_fits.csv in {out_dir}")
            for w in manifest["warnings"]:
                print(f"  warning: {w}")
        elif args.command == "welfare":
            manifest = run_welfare(config, out_dir)
            print(f"welfare: wrote cv_table.csv ({manifest['stages']['welfare']['cells']} cells) in {out_dir}")
            for w in manifest["warnings"]:
                print(f"  warning: {w}")
        elif args.command == "check":
            report = run_check(config, out_dir)
            for c in report["checks"]:
                status = "pass" if c["passed"] else "FAIL"
                print(f"  [{status}] {c['name']}: value={c['value']!r} tolerance={c['tolerance']!r}")
            if not report["passed"]:
                print("check: FAILED", file=sys.stderr)
                return EXIT_NUMERIC
            print("check: all invariants hold")
        elif args.command == "replicate-paper":
            report = run_replicate(out_dir)
            _print_replication(report)
        elif args.command == "plot":
            info = run_plot(config, out_dir)
            cross = info["frontier_crossing_ln_score"]
            msg = f"ln s = {cross:.4f}" if cross is not None else "none (parallel slopes)"
            print(f"plot: wrote frontier_change.svg and cv_by_quantile.svg; crossing at {msg}")
    except _REPLICATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REPLICATION
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except HedonicWelfareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
