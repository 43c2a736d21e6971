"""Command-line entry point: argument parsing, subcommand routing and exit codes."""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from .config import init_logging, parse_k_range
from .errors import PipelineError
from .routes import scenarios, stages
from .settings import get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _k_range(text: str):
    try:
        return parse_k_range(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def common_options() -> argparse.ArgumentParser:
    """Flags every subcommand accepts; each overrides the matching config key."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", metavar="PATH", help="pipeline (or scenario) TOML file")
    parent.add_argument("--input", metavar="PATH", help="raw sample file")
    parent.add_argument("--out", metavar="DIR", help="output directory")
    parent.add_argument("--grid-ms", type=int, metavar="N", help="grid step in milliseconds")
    k_group = parent.add_mutually_exclusive_group()
    k_group.add_argument("--k", type=int, metavar="N", help="fixed number of phases")
    k_group.add_argument("--k-range", type=_k_range, metavar="A,B", help="choose k in [A, B] by the elbow rule")
    parent.add_argument("--seed", type=int, metavar="N")
    parent.add_argument("--restarts", type=int, metavar="N")
    parent.add_argument("--no-kalman", action="store_true", help="skip Kalman filtering")
    parent.add_argument("--no-plots", action="store_true", help="skip SVG plots")
    parent.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phases",
        description="Segment a basketball match into phases from player-tracking data.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    parent = common_options()
    stages.register(subparsers, parent)
    scenarios.register(subparsers, parent)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    init_logging(quiet=args.quiet)
    get_settings().log_settings()
    try:
        return args.handler(args)
    except PipelineError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except ValidationError as e:
        print(f"error: [config] {e}", file=sys.stderr)
        return EXIT_FAILURE
