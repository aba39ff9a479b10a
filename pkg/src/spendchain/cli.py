"""Command line entry point: ``spendchain <command> --config <path>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import COMMANDS, ConfigError, SimConfig, run_experiment

log = logging.getLogger("spendchain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spendchain", description="Proof-of-spending consensus experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override the config's master seed")
    parser.add_argument("--trials", type=int, help="override the config's trial count")
    parser.add_argument("--out", help="directory for results.csv and summary.json (default: CSV on stdout)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = SimConfig.load(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.trials is not None:
            config.trials = args.trials
        config.validate()
        result = run_experiment(config, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        result.write(args.out)
        log.info("wrote %s/results.csv and %s/summary.json", args.out, args.out)
    else:
        sys.stdout.write(result.csv_text())
    if result.message:
        print(result.message)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
