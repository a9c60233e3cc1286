"""Command-line front end: ``twincal --scenario FILE --out FILE``."""

import argparse
import logging
import sys
from dataclasses import replace

from .exceptions import ConfigError
from .harness import BUILTIN_SCENARIOS, all_rows_failed, emit_csv, load_scenario, run_scenario
from .verify import run_checks

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ESTIMATOR = 2

logger = logging.getLogger("twincal")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="twincal",
        description="Simulate twin-beam photodetection and compare Klyshko and difference-signal QE estimates.",
    )
    parser.add_argument(
        "--scenario",
        default="default",
        help=f"scenario JSON file or a built-in name ({', '.join(BUILTIN_SCENARIOS)}); default: %(default)s",
    )
    parser.add_argument("--out", default="-", help="output CSV path; '-' for stdout (default)")
    parser.add_argument("--pulses", type=int, help="override the scenario's pulse count per run")
    parser.add_argument("--seed", type=int, help="override the scenario's seed (unsigned 64-bit)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads; does not change the output")
    parser.add_argument("--verify", action="store_true", help="run exact-oracle cross-checks first, abort on failure")
    parser.add_argument("--bootstrap", type=int, default=200, help="bootstrap replicates per estimate")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        scenario = load_scenario(args.scenario)
        overrides = {}
        if args.pulses is not None:
            overrides["n_pulses"] = args.pulses
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            scenario = replace(scenario, **overrides)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"twincal: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.verify:
        failed = [name for name, ok, _ in run_checks() if not ok]
        if failed:
            print(f"twincal: verification failed: {', '.join(failed)}", file=sys.stderr)
            return EXIT_ESTIMATOR
        logger.info("all oracle checks passed")

    table = run_scenario(scenario, threads=args.threads, n_boot=args.bootstrap)
    try:
        emit_csv(table, args.out)
    except OSError as exc:
        print(f"twincal: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if all_rows_failed(table):
        print("twincal: every estimate failed", file=sys.stderr)
        return EXIT_ESTIMATOR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
