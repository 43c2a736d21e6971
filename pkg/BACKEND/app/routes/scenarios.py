"""The synth subcommand."""

import argparse
import logging
from pathlib import Path

from ..services import pipeline_service, synth_service
from ..settings import get_settings

logger = logging.getLogger(__name__)


def synth(args: argparse.Namespace) -> int:
    if args.config is not None:
        scenario = synth_service.load_scenario(args.config)
    else:
        scenario = synth_service.eight_formation_scenario()
    if args.seed is not None:
        scenario = scenario.model_copy(update={"seed": args.seed})
    out_dir = Path(args.out) if args.out is not None else Path(get_settings().OUTPUT_DIR)
    session, truth = pipeline_service.synth_stage(scenario, out_dir)
    print(f"{session.n_samples} samples, {len(truth.timestamps)} grid instants -> {out_dir}")
    return 0


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    parser = subparsers.add_parser(
        "synth",
        parents=[parent],
        help="generate a synthetic session with ground truth",
        description="Generate samples.csv, truth.csv and pipeline.toml from a scenario file "
                    "(default: the eight-formation scenario).",
    )
    parser.set_defaults(handler=synth)
