"""``hvsense``: run a positioning-error sweep from a YAML config.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .experiments import ConfigError, ExperimentConfig, load_config, run_experiment, summary_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvsense",
        description="Monte Carlo sweeps of hidden-vehicle positioning error (CSV output).",
    )
    parser.add_argument("config", nargs="?", help="YAML experiment config; omit to run all defaults")
    parser.add_argument("-o", "--out", help="output directory (overrides the config's 'output')")
    parser.add_argument("-j", "--jobs", type=int, default=1, help="worker processes (default 1)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v progress, -vv debug")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("hvsense")

    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
    except ConfigError as exc:
        print(f"hvsense: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"hvsense: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("hvsense: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        cfg = replace(cfg, output=args.out)
    if args.print_config:
        print(cfg.echo(), end="")
        return EXIT_OK

    def progress(done, total):
        if args.verbose and (done == total or done % max(1, total // 20) == 0):
            log.info("%d/%d trials", done, total)

    try:
        result = run_experiment(cfg, jobs=args.jobs, progress=progress)
    except OSError as exc:
        print(f"hvsense: output error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any crash maps to the runtime exit code
        log.debug("trial run failed", exc_info=True)
        print(f"hvsense: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary_text(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
