"""Command-line entry point: ``randpe {sweep,pe,bounds-audit} --config FILE``.

Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 a strict
bound was violated.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import (
    ConfigError,
    default_jobs,
    load_config,
    run_bounds_audit,
    run_pe_session_cmd,
    run_sweep,
)
from .hamiltonian import DimensionError, HamiltonianFormatError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BOUND = 0, 1, 2, 3

_COMMAND_MODE = {"sweep": "sweep", "pe": "pe-session", "bounds-audit": "bounds-audit"}

log = logging.getLogger("randpe")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randpe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMAND_MODE:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config (schema: 1)")
        p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: $RANDPE_JOBS or 1)")
        p.add_argument("--output", default=None, help="output directory (overrides output_path)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        mode = _COMMAND_MODE[args.command]
        if cfg.mode != mode:
            raise ConfigError(f"mode: config is for {cfg.mode!r} but command is {args.command!r}")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be in [0, 2**64)")
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = cfg.with_overrides(seed=args.seed, output_path=args.output)
        jobs = args.jobs if args.jobs is not None else default_jobs()
        if mode == "sweep":
            rows = run_sweep(cfg, jobs)
            log.info("wrote %d sweep rows", len(rows))
        elif mode == "pe-session":
            result = run_pe_session_cmd(cfg, jobs)
            for k, v in result["summary"].items():
                print(f"{k}: {v}")
        else:
            result = run_bounds_audit(cfg, jobs)
            for row in result["rates"]:
                print(",".join(row))
            if result["strict_violations"]:
                print(f"strict bound violations: {result['strict_violations']}", file=sys.stderr)
                return EXIT_BOUND
    except (ConfigError, HamiltonianFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, DimensionError, ArithmeticError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
