"""Pipeline subcommands: ingest, filter, features, fit, report and run."""

import argparse
import logging

from ..config import PipelineConfig, apply_overrides, load_pipeline_config
from ..services import pipeline_service
from ..storage import REPORT_FILE

logger = logging.getLogger(__name__)


def stage_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_pipeline_config(args.config)
    return apply_overrides(
        config,
        input=args.input,
        out=args.out,
        grid_ms=args.grid_ms,
        k=args.k,
        k_range=args.k_range,
        seed=args.seed,
        restarts=args.restarts,
        no_kalman=args.no_kalman,
        no_plots=args.no_plots,
    )


def ingest(args: argparse.Namespace) -> int:
    config = stage_config(args)
    frames = pipeline_service.ingest_stage(config)
    logger.info(f"ingest: {frames} frames in {config.output_dir}")
    return 0


def filter_frames(args: argparse.Namespace) -> int:
    config = stage_config(args)
    frames = pipeline_service.filter_stage(config)
    logger.info(f"filter: {frames} frames")
    return 0


def features(args: argparse.Namespace) -> int:
    matrix = pipeline_service.features_stage(stage_config(args))
    logger.info(f"features: {matrix.n_rows} rows")
    return 0


def fit(args: argparse.Namespace) -> int:
    model = pipeline_service.fit_stage(stage_config(args))
    logger.info(f"fit: k={model.k}, BD/TD={model.bd_td_ratio:.4f}")
    return 0


def report(args: argparse.Namespace) -> int:
    config = stage_config(args)
    phase_report = pipeline_service.report_stage(config)
    print(f"{phase_report.k} phases -> {config.output_dir / REPORT_FILE}")
    return 0


def run(args: argparse.Namespace) -> int:
    config = stage_config(args)
    phase_report = pipeline_service.run_pipeline(config)
    print(f"{phase_report.k} phases -> {config.output_dir / REPORT_FILE}")
    return 0


COMMANDS = [
    ("ingest", ingest, "parse, clip, select the roster and regularize into frames.csv"),
    ("filter", filter_frames, "Kalman-filter frames.csv into frames_filtered.csv"),
    ("features", features, "pairwise distances into features.csv"),
    ("fit", fit, "k-means (or k selection) into model.txt and labels.csv"),
    ("report", report, "phase report, tables and plots"),
    ("run", run, "every stage in one go"),
]


def register(subparsers, parent: argparse.ArgumentParser) -> None:
    for name, handler, help_text in COMMANDS:
        parser = subparsers.add_parser(name, parents=[parent], help=help_text, description=help_text)
        parser.set_defaults(handler=handler)
