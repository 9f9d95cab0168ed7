"""Command-line entry point: ``supermarket <command> [options]``.

Exit codes: 0 success, 1 a verification reported FAIL, 2 invalid
configuration, 3 limit solver fault.
"""
from __future__ import annotations

import argparse
import configparser
import sys

from . import experiments as ex
from .limits import SolverFault

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

# section receiving --dt/--horizon/--levels for each command
SECTION = {
    "simulate": "simulate",
    "limit": "limit",
    "converge": "converge",
    "verify-bound": "steady",
    "figure1": "figure1",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [model], [simulate], [limit], ... sections")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (SUPERMARKET_WORKERS overrides)")
    common.add_argument("--dt", type=float, help="grid spacing")
    common.add_argument("--horizon", type=float, help="time horizon")
    common.add_argument("--levels", help="levels to track (steady: a range such as 1-8)")

    parser = argparse.ArgumentParser(prog="supermarket", description="Supermarket model experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate one rescaled path")
    sub.add_parser("limit", parents=[common], help="integrate the deterministic limit")
    sub.add_parser("converge", parents=[common], help="discrepancy to the limit along an n ladder")
    steady = sub.add_parser("steady", help="steady-state experiments")
    steady_sub = steady.add_subparsers(dest="steady_command", required=True)
    steady_sub.add_parser("verify-bound", parents=[common], help="check the expectation lower bound")
    steady_sub.add_parser("figure1", parents=[common], help="level log_d(eta)+k sweep over n")
    return parser


def resolve(args) -> configparser.ConfigParser:
    name = args.steady_command if args.command == "steady" else args.command
    section = SECTION[name]
    over = {
        ("run", "seed"): args.seed,
        ("run", "out"): args.out,
        ("run", "workers"): args.workers,
        (section, "dt"): args.dt,
        (section, "horizon"): args.horizon,
        (section, "levels"): args.levels,
    }
    cfg = ex.load_config(args.config, over)
    if int(cfg["run"]["seed"]) < 0:
        raise ex.ConfigError("seed must be nonnegative")
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        if args.command == "simulate":
            out = ex.cmd_simulate(cfg)
        elif args.command == "limit":
            out = ex.cmd_limit(cfg)
        elif args.command == "converge":
            out = ex.cmd_converge(cfg)
        elif args.steady_command == "verify-bound":
            out, ok = ex.cmd_verify_bound(cfg)
            print(out)
            return EXIT_OK if ok else EXIT_FAIL
        else:
            out = ex.cmd_figure1(cfg)
    except SolverFault as exc:
        print(f"supermarket: solver fault: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ex.ConfigError, configparser.Error, ValueError, KeyError) as exc:
        print(f"supermarket: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(out)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
