"""Command line front end: ``mnsl <command> --config FILE [--seed N] [--threads N] [--out DIR]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 runtime or numerical error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import COMMANDS, ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mnsl", description="Stochastic Lagrangian flow experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker cap (default: machine parallelism)")
    ap.add_argument("--out", help="output directory (default: $MNSL_OUT, then ./mnsl-out/<command>)")
    ap.add_argument("--quiet", action="store_true", help="do not print the pass/fail table")
    return ap


def resolve(args) -> ExperimentConfig:
    cfg = load_config(args.command, args.config) if args.config else ExperimentConfig.from_dict(args.command, {})
    errors = []
    if args.seed is not None and args.seed < 0:
        errors.append(f"--seed must be non-negative, got {args.seed}")
    if args.threads is not None and args.threads < 1:
        errors.append(f"--threads must be positive, got {args.threads}")
    if errors:
        raise ConfigError(errors)
    out = args.out or cfg.out or os.environ.get("MNSL_OUT") or str(Path("mnsl-out") / args.command)
    return cfg.with_overrides(master_seed=args.seed, threads=args.threads, out=out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
    except ConfigError as e:
        print(f"mnsl: {e}", file=sys.stderr)
        return EXIT_CONFIG

    from .report import write_report
    from .runner import run_experiment

    try:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"mnsl: cannot create output directory {cfg.out}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    rep = run_experiment(cfg, cfg.out)
    try:
        write_report(rep, cfg.out)
    except OSError as e:
        print(f"mnsl: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        sys.stdout.write(rep.to_text())
    if rep.error is not None:
        return EXIT_RUNTIME
    return EXIT_OK if rep.passed else EXIT_CHECK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
