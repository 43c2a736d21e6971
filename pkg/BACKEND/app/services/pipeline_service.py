"""End-to-end orchestration.

Each stage function is used both by the staged subcommands, which read the
previous stage's files, and by ``run_pipeline``, which keeps everything in
memory and writes the same files along the way.
"""

from itertools import groupby
import logging
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import PipelineConfig, dump_pipeline_config
from ..errors import ArtifactError, ConfigurationError
from ..models import (
    CentroidSeries,
    ClusterModel,
    FeatureMatrix,
    FrameSeries,
    GroundTruth,
    KSelection,
    MatchTimeline,
    PhaseReport,
    RawSession,
    Scenario,
)
from ..settings import Settings, get_settings
from ..storage import (
    FEATURES_FILE,
    FILTERED_FILE,
    FILTERED_INFO_FILE,
    FRAMES_FILE,
    FRAMES_INFO_FILE,
    LABELS_FILE,
    MODEL_FILE,
    PLOTS_DIR,
    REPORT_FILE,
    SUMMARIES_FILE,
    TRANSITIONS_FILE,
    ArtifactStore,
    atomic_write,
    write_samples,
)
from . import analysis_service, clustering_service, feature_service, ingest_service, kalman_service
from .plot_service import render_plots
from .synth_service import generate_session

logger = logging.getLogger(__name__)

SAMPLES_FILE = "samples.csv"
TRUTH_FILE = "truth.csv"
SCENARIO_CONFIG_FILE = "pipeline.toml"


def frames_file(config: PipelineConfig) -> str:
    """The frames the feature stage reads: Kalman-filtered unless filtering is off."""
    return ArtifactStore.FILTERED_FILE if config.kalman.enabled else ArtifactStore.FRAMES_FILE


# files each stage writes, in stage order
STAGE_OUTPUTS = {
    "ingest": (FRAMES_FILE, FRAMES_INFO_FILE),
    "filter": (FILTERED_FILE, FILTERED_INFO_FILE),
    "features": (FEATURES_FILE,),
    "fit": (MODEL_FILE, LABELS_FILE),
    "report": (SUMMARIES_FILE, TRANSITIONS_FILE, "mds_*.csv", REPORT_FILE, PLOTS_DIR),
}


def clear_outputs(store: ArtifactStore, stage: str) -> None:
    """Remove what ``stage`` and every later stage wrote before."""
    stages = list(STAGE_OUTPUTS)
    store.discard(p for s in stages[stages.index(stage):] for p in STAGE_OUTPUTS[s])


# ingest

def load_session(config: PipelineConfig) -> RawSession:
    if config.input.path is None:
        raise ConfigurationError("no input file: set [input].path or pass --input")
    try:
        session = ingest_service.parse_records(config.input.path, config.input.record_format())
    except FileNotFoundError:
        raise ConfigurationError(f"input file {config.input.path} does not exist")
    return session.with_samples(session.samples, court=config.court, grid_step=config.grid.step_ms)


def prepare_session(session: RawSession, config: PipelineConfig) -> Tuple[RawSession, MatchTimeline]:
    """Clip to play, keep the active five and start the clock at their first sample."""
    session = ingest_service.clip_to_play(session, config.timeline)
    active = config.roster.active if config.roster.active is not None else sorted(session.roster)
    session = ingest_service.select_roster(session, active)
    session, timeline = ingest_service.rebase_to_first_sample(session, config.timeline)
    if session.n_samples >= 2:
        stats = ingest_service.session_stats(session)
        logger.info(
            f"Sampling: {stats.overall_rate_hz:.1f} samples/s overall, "
            f"mean interval {stats.overall_mean_interval_ms:.1f} ms"
        )
    return session, timeline


def frame_chunks(session: RawSession, timeline: MatchTimeline, config: PipelineConfig,
                 settings: Optional[Settings] = None) -> Iterator[Tuple[int, FrameSeries]]:
    settings = settings or get_settings()
    return ingest_service.regularize_periods(session, timeline, config.grid.step_ms,
                                             chunk_frames=settings.CHUNK_FRAMES)


def collect_series(chunks: Iterable[Tuple[int, FrameSeries]]) -> List[FrameSeries]:
    """One FrameSeries per period from a stream of (period, chunk) pairs."""
    return [FrameSeries.concat([chunk for _, chunk in group])
            for _, group in groupby(chunks, key=lambda pair: pair[0])]


# filter

def filter_series(series: List[FrameSeries], config: PipelineConfig) -> List[FrameSeries]:
    """Kalman state restarts at every period."""
    if not config.kalman.enabled:
        logger.info("Kalman filtering disabled")
        return series
    params = config.kalman.params(config.grid.step_ms)
    return [kalman_service.filter_frames(frames, params) for frames in series]


# features

def build_features(series: List[FrameSeries]) -> Tuple[FeatureMatrix, CentroidSeries]:
    features = feature_service.build_feature_matrices(series)
    centroids = CentroidSeries.concat([feature_service.centroid_series(frames) for frames in series])
    return features, centroids


# fit

def fit(features: FeatureMatrix, config: PipelineConfig) -> Tuple[ClusterModel, Optional[KSelection]]:
    c = config.clustering
    X = feature_service.standardize(features) if config.features.standardize else features
    if c.k is not None:
        model = clustering_service.kmeans(X, c.k, seed=c.seed, restarts=c.restarts,
                                          max_iter=c.max_iter, tol=c.tol)
        return model, None
    k_min, k_max = c.k_range
    if k_max > features.n_rows:
        logger.warning(f"k range upper bound {k_max} exceeds {features.n_rows} instants, clamping")
        k_max = features.n_rows
    selection = clustering_service.select_k(X, k_min, k_max, min_ratio=c.min_ratio, min_gain=c.min_gain,
                                            seed=c.seed, restarts=c.restarts, max_iter=c.max_iter, tol=c.tol)
    return selection.model, selection


# report

def analyse(features: FeatureMatrix, labels: np.ndarray, centroids: CentroidSeries, model: ClusterModel,
            selection: Optional[KSelection], config: PipelineConfig, timeline: MatchTimeline,
            epoch_ms: int = 0) -> PhaseReport:
    return analysis_service.build_phase_report(
        features,
        labels,
        centroids,
        timeline,
        court=config.court,
        k=model.k,
        grid_step=config.grid.step_ms,
        selection=selection,
        config=config.echo(),
        phase_threshold=config.analysis.phase_threshold,
        epoch_ms=epoch_ms,
    )


def write_report(report: PhaseReport, store: ArtifactStore, config: PipelineConfig,
                 settings: Optional[Settings] = None) -> None:
    store.write_report(report)
    if config.output.plots:
        render_plots(report, store.path(PLOTS_DIR), settings)


# staged runs, each reading what the previous stage wrote

def ingest_stage(config: PipelineConfig, settings: Optional[Settings] = None) -> int:
    store = ArtifactStore(config.output_dir)
    clear_outputs(store, "ingest")
    session, timeline = prepare_session(load_session(config), config)
    return store.write_frames(frame_chunks(session, timeline, config, settings), epoch_ms=session.epoch_ms)


def filter_stage(config: PipelineConfig) -> int:
    store = ArtifactStore(config.output_dir)
    clear_outputs(store, "filter")
    series = store.read_frames(config.grid.step_ms)
    if not config.kalman.enabled:
        logger.info("Kalman filtering disabled, features will read the raw frames")
        return sum(frames.n_frames for frames in series)
    return store.write_frames(enumerate(filter_series(series, config)), name=frames_file(config),
                              epoch_ms=store.read_frame_info().epoch_ms)


def features_stage(config: PipelineConfig) -> FeatureMatrix:
    store = ArtifactStore(config.output_dir)
    clear_outputs(store, "features")
    features, _ = build_features(store.read_frames(config.grid.step_ms, name=frames_file(config)))
    store.write_features(features)
    return features


def fit_stage(config: PipelineConfig) -> ClusterModel:
    store = ArtifactStore(config.output_dir)
    clear_outputs(store, "fit")
    features = store.read_features()
    model, selection = fit(features, config)
    store.write_model(model, selection)
    store.write_labels(features.timestamps, model.labels)
    return model


def report_stage(config: PipelineConfig, settings: Optional[Settings] = None) -> PhaseReport:
    store = ArtifactStore(config.output_dir)
    clear_outputs(store, "report")
    features = store.read_features()
    timestamps, labels = store.read_labels()
    if not np.array_equal(timestamps, features.timestamps):
        raise ArtifactError("labels.csv does not cover the same instants as features.csv")
    model, selection = store.read_model()
    _, centroids = build_features(store.read_frames(config.grid.step_ms, name=frames_file(config)))
    epoch_ms = store.read_frame_info(frames_file(config)).epoch_ms
    report = analyse(features, labels, centroids, model, selection, config,
                     config.timeline.rebased(epoch_ms), epoch_ms)
    write_report(report, store, config, settings)
    return report


# monolithic run

def run_pipeline(config: PipelineConfig, settings: Optional[Settings] = None) -> PhaseReport:
    """ingest -> filter -> features -> fit -> report, writing every artifact."""
    store = ArtifactStore(config.output_dir)
    clear_outputs(store, "ingest")
    session, timeline = prepare_session(load_session(config), config)

    collected: List[Tuple[int, FrameSeries]] = []

    def keep(chunks: Iterable[Tuple[int, FrameSeries]]) -> Iterator[Tuple[int, FrameSeries]]:
        for pair in chunks:
            collected.append(pair)
            yield pair

    store.write_frames(keep(frame_chunks(session, timeline, config, settings)), epoch_ms=session.epoch_ms)
    series = collect_series(collected)
    del collected

    series = filter_series(series, config)
    if config.kalman.enabled:
        store.write_frames(enumerate(series), name=frames_file(config), epoch_ms=session.epoch_ms)

    features, centroids = build_features(series)
    store.write_features(features)

    model, selection = fit(features, config)
    store.write_model(model, selection)
    store.write_labels(features.timestamps, model.labels)

    report = analyse(features, model.labels, centroids, model, selection, config, timeline, session.epoch_ms)
    write_report(report, store, config, settings)
    logger.info(f"Pipeline finished: {report.k} phases over {report.n_instants} instants")
    return report


# synthetic sessions

def scenario_config(scenario: Scenario) -> PipelineConfig:
    """Pipeline config that analyses a generated session from its own directory.

    Kalman filtering is off: synthetic players jump between anchors, which a
    constant-velocity model would smear across the following seconds.
    """
    return PipelineConfig.model_validate({
        "input": {"path": SAMPLES_FILE},
        "timeline": scenario.timeline().model_dump(),
        "court": scenario.court.model_dump(),
        "roster": {"active": list(scenario.players)},
        "grid": {"step_ms": scenario.grid_step},
        "kalman": {"enabled": False},
    })


def write_truth(truth: GroundTruth, path: Path) -> Path:
    with atomic_write(path) as fh:
        pd.DataFrame({
            "t_ms": truth.timestamps,
            "formation": truth.formation,
            "name": np.asarray(truth.formation_names)[truth.formation],
            "offensive": truth.offensive.astype(int),
        }).to_csv(fh, index=False)
    return path


def synth_stage(scenario: Scenario, out_dir: Path) -> Tuple[RawSession, GroundTruth]:
    """samples.csv, truth.csv and a ready-to-run pipeline.toml in ``out_dir``."""
    out_dir = Path(out_dir)
    session, truth = generate_session(scenario)
    write_samples(session, out_dir / SAMPLES_FILE)
    write_truth(truth, out_dir / TRUTH_FILE)
    with atomic_write(out_dir / SCENARIO_CONFIG_FILE) as fh:
        fh.write(dump_pipeline_config(scenario_config(scenario)))
    logger.info(f"Wrote synthetic session, ground truth and pipeline config to {out_dir}")
    return session, truth
