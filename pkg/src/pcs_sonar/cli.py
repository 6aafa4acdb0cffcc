"""Command-line front end: synth | train | classify | screen | evaluate | bench.

Exit codes: 0 success, 1 configuration problem (bad flags, malformed or
invalid config), 2 runtime failure.  ``PCS_LOG`` (error/info/debug) controls
verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, default_config, load_config
from . import pipeline

log = logging.getLogger("pcs_sonar")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors, not exit 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="pcs-sonar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_paths in (
        ("synth", False),
        ("train", False),
        ("classify", True),
        ("screen", True),
        ("evaluate", False),
        ("bench", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
        if needs_paths:
            p.add_argument("images", nargs="+", help="PGM files or directories")
    return parser


def _configure_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("PCS_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def run_command(argv) -> int:
    """Parse argv and dispatch; returns the process exit status."""
    _configure_logging()
    try:
        args = _build_parser().parse_args(argv)
        cfg = load_config(args.config) if args.config else default_config().validate()
        if args.seed is not None:
            cfg.values["experiment"]["seed"] = args.seed
            cfg.values["synth"]["seed"] = args.seed
        if args.out:
            cfg.values["paths"]["output_dir"] = args.out
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "synth":
            pipeline.run_synth(cfg)
        elif args.command == "train":
            pipeline.run_train(cfg)
        elif args.command == "classify":
            pipeline.run_classify(cfg, args.images, screen=False)
        elif args.command == "screen":
            pipeline.run_classify(cfg, args.images, screen=True)
        elif args.command == "evaluate":
            pipeline.run_evaluate(cfg, jobs=max(1, args.jobs))
        elif args.command == "bench":
            pipeline.run_bench(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
