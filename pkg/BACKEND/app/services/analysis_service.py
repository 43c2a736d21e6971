"""Phase characterization: shares, distance profiles, MDS maps, offense shares, switches."""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import AnalysisError
from ..models import (
    CentroidSeries,
    ClusterSummary,
    CourtDimensions,
    FeatureMatrix,
    KSelection,
    MatchTimeline,
    MdsEmbedding,
    PhaseCharacter,
    PhaseReport,
    PhaseSegment,
    TransitionMatrix,
    AttackDirection,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9


def _n_clusters(labels: np.ndarray, k: Optional[int]) -> int:
    return int(k) if k is not None else (int(labels.max()) + 1 if labels.size else 0)


def _check_nonempty(counts: np.ndarray) -> None:
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise AnalysisError(f"clusters {empty.tolist()} have no instants")


def square_form(vector: Sequence[float], pair_labels: Sequence[Tuple[int, int]],
                players: Sequence[int]) -> np.ndarray:
    """Square symmetric form of a pairwise-distance vector."""
    position = {p: i for i, p in enumerate(players)}
    matrix = np.zeros((len(players), len(players)))
    for value, (a, b) in zip(vector, pair_labels):
        matrix[position[a], position[b]] = matrix[position[b], position[a]] = value
    return matrix


def summarize_clusters(features: FeatureMatrix, labels, k: Optional[int] = None) -> List[ClusterSummary]:
    """Share and mean pairwise distances of each cluster."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != features.n_rows:
        raise AnalysisError(f"{labels.shape[0]} labels for {features.n_rows} feature rows")
    k = _n_clusters(labels, k)
    counts = np.bincount(labels, minlength=k)
    _check_nonempty(counts)

    frame = pd.DataFrame(features.values, columns=features.column_names())
    means = frame.groupby(labels, sort=True).mean()

    summaries = []
    for cluster in range(k):
        vector = means.loc[cluster].to_numpy()
        summaries.append(ClusterSummary(
            cluster_id=cluster,
            size=int(counts[cluster]),
            share=float(counts[cluster] / labels.shape[0]),
            mean_distances=[float(v) for v in vector],
            mean_distance_matrix=square_form(vector, features.pair_labels, features.players).tolist(),
        ))
    return summaries


def classical_mds(distance_matrix, dim: int = 2) -> MdsEmbedding:
    """Torgerson scaling: eigendecomposition of the double-centred squared distances.

    Each axis is oriented so its largest-magnitude coordinate is positive.
    """
    D = np.asarray(distance_matrix, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise AnalysisError(f"distance matrix must be square, got shape {D.shape}")
    n = D.shape[0]
    if n < 2:
        raise AnalysisError("MDS needs at least 2 points")
    if not np.allclose(D, D.T, atol=SYMMETRY_TOL, rtol=0):
        raise AnalysisError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(D)) > SYMMETRY_TOL) or np.any(D < 0):
        raise AnalysisError("distance matrix needs a zero diagonal and non-negative entries")

    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D ** 2) @ J
    evals, evecs = np.linalg.eigh((B + B.T) / 2)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]

    threshold = 1e-6 * abs(np.trace(B)) + 1e-12
    non_euclidean = bool(np.any(evals < -threshold))
    if non_euclidean:
        logger.warning(f"Distance matrix is not Euclidean (smallest eigenvalue {evals[-1]:.3g})")

    kept = np.zeros(dim)
    coords = np.zeros((n, dim))
    m = min(dim, n)
    kept[:m] = evals[:m]
    coords[:, :m] = evecs[:, :m] * np.sqrt(np.clip(evals[:m], 0, None))
    for axis in range(dim):
        pivot = int(np.argmax(np.abs(coords[:, axis])))
        if coords[pivot, axis] < 0:
            coords[:, axis] = -coords[:, axis]

    embedded = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
    return MdsEmbedding(
        coordinates=[tuple(float(v) for v in row) for row in coords],
        eigenvalues=tuple(float(v) for v in kept[:2]),
        stress_abs=float(np.max(np.abs(embedded - D))),
        non_euclidean=non_euclidean,
    )


def profile_deviations(summary: ClusterSummary, global_mean_distances) -> np.ndarray:
    """Cluster mean minus match-wide mean per pair; negative means tighter than usual."""
    cluster = np.asarray(summary.mean_distances, dtype=np.float64)
    overall = np.asarray(global_mean_distances, dtype=np.float64)
    if cluster.shape != overall.shape:
        raise AnalysisError(f"profile of length {cluster.size} against global mean of length {overall.size}")
    return cluster - overall


def tight_pairs(deviation, pair_labels: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Pairs closer than their match-wide mean, tightest first."""
    deviation = np.asarray(deviation)
    order = np.argsort(deviation, kind="stable")
    return [tuple(pair_labels[i]) for i in order if deviation[i] < 0]


def label_offense(centroids: CentroidSeries, timeline: MatchTimeline,
                  court: Optional[CourtDimensions] = None) -> np.ndarray:
    """True where the team centroid is strictly inside the attacking half.

    A centroid exactly on the half-court line counts as defensive.
    """
    court = court or CourtDimensions()
    period = timeline.period_index(centroids.timestamps)
    outside = np.flatnonzero(period < 0)
    if outside.size:
        raise AnalysisError(
            f"instant {int(centroids.timestamps[outside[0]])} ms lies outside every timeline period"
        )
    positive = np.array([p.attack_direction is AttackDirection.POSITIVE_X for p in timeline.periods])
    x = centroids.xy[:, 0]
    half = court.half_line
    return np.where(positive[period], x > half, x < half)


def offense_share(labels, offense_flags, k: Optional[int] = None) -> np.ndarray:
    """Fraction of each cluster's instants flagged offensive."""
    labels = np.asarray(labels, dtype=np.int64)
    flags = np.asarray(offense_flags, dtype=bool)
    if labels.shape != flags.shape:
        raise AnalysisError(f"{labels.size} labels but {flags.size} offense flags")
    k = _n_clusters(labels, k)
    counts = np.bincount(labels, minlength=k)
    _check_nonempty(counts)
    return np.bincount(labels, weights=flags.astype(np.float64), minlength=k) / counts


def phase_character(shares, threshold: float = 0.5) -> List[PhaseCharacter]:
    characters = []
    for share in np.asarray(shares, dtype=np.float64):
        if share > threshold:
            characters.append(PhaseCharacter.OFFENSIVE)
        elif 1.0 - share > threshold:
            characters.append(PhaseCharacter.DEFENSIVE)
        else:
            characters.append(PhaseCharacter.MIXED)
    return characters


def _switch_pairs(labels: np.ndarray, segments: Optional[np.ndarray]) -> np.ndarray:
    same_segment = np.ones(labels.size - 1, dtype=bool)
    if segments is not None:
        same_segment = segments[1:] == segments[:-1]
    return (labels[1:] != labels[:-1]) & same_segment


def transition_matrix(labels, k: Optional[int] = None, segments=None) -> TransitionMatrix:
    """Counts and row-normalized frequencies of switches between different clusters.

    Pairs (t, t+1) with equal labels are ignored, as are pairs that straddle
    two segments.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size < 2:
        raise AnalysisError(f"transitions need at least 2 instants, got {labels.size}")
    segments = None if segments is None else np.asarray(segments)
    k = _n_clusters(labels, k)

    switch = _switch_pairs(labels, segments)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels[:-1][switch], labels[1:][switch]), 1)

    totals = counts.sum(axis=1)
    probabilities = np.zeros((k, k))
    nonzero = totals > 0
    probabilities[nonzero] = counts[nonzero] / totals[nonzero, None]
    return TransitionMatrix(
        counts=counts.tolist(),
        probabilities=probabilities.tolist(),
        empty_rows=np.flatnonzero(~nonzero).tolist(),
    )


def dominant_switches(transitions: TransitionMatrix) -> List[Optional[int]]:
    """Most frequent destination of each cluster's switches, None when it never switches."""
    probabilities = transitions.probability_array
    empty = set(transitions.empty_rows)
    return [None if row in empty else int(np.argmax(probabilities[row])) for row in range(len(probabilities))]


def phase_segments(labels, timestamps, grid_step: int, segments=None) -> List[PhaseSegment]:
    """Split the instants into contiguous runs of one cluster."""
    labels = np.asarray(labels, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    if labels.size == 0:
        return []
    segments = np.zeros(labels.size, dtype=np.int64) if segments is None else np.asarray(segments)

    breaks = (labels[1:] != labels[:-1]) | (segments[1:] != segments[:-1])
    breaks |= np.diff(timestamps) != grid_step
    starts = np.concatenate([[0], np.flatnonzero(breaks) + 1])
    ends = np.concatenate([starts[1:], [labels.size]])
    return [
        PhaseSegment(
            cluster=int(labels[s]),
            segment=int(segments[s]),
            start_ms=int(timestamps[s]),
            end_ms=int(timestamps[e - 1]) + grid_step,
        )
        for s, e in zip(starts, ends)
    ]


def build_phase_report(features: FeatureMatrix, labels, centroids: CentroidSeries,
                       timeline: MatchTimeline, court: Optional[CourtDimensions] = None,
                       k: Optional[int] = None, grid_step: int = 1,
                       selection: Optional[KSelection] = None,
                       config: Optional[Dict[str, Any]] = None,
                       phase_threshold: float = 0.5, epoch_ms: int = 0) -> PhaseReport:
    """Assemble every per-cluster characterization into one report.

    ``epoch_ms`` is where t = 0 of the features sits on the source clock.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = _n_clusters(labels, k)
    summaries = summarize_clusters(features, labels, k)
    global_means = features.values.mean(axis=0)

    flags = label_offense(centroids, timeline, court)
    shares = offense_share(labels, flags, k)
    characters = phase_character(shares, phase_threshold)
    if labels.size >= 2:
        transitions = transition_matrix(labels, k, segments=features.segment_ids)
    else:
        transitions = TransitionMatrix(counts=[[0] * k for _ in range(k)],
                                       probabilities=[[0.0] * k for _ in range(k)],
                                       empty_rows=list(range(k)))
    switches = dominant_switches(transitions)
    runs = phase_segments(labels, features.timestamps, grid_step, features.segment_ids)

    durations: Dict[int, List[int]] = {c: [] for c in range(k)}
    for run in runs:
        durations[run.cluster].append(run.duration_ms)

    embeddings = []
    for summary in summaries:
        deviation = profile_deviations(summary, global_means)
        summary.offense_share = float(shares[summary.cluster_id])
        summary.character = characters[summary.cluster_id]
        summary.profile_deviation = [float(v) for v in deviation]
        summary.tight_pairs = tight_pairs(deviation, features.pair_labels)
        summary.n_segments = len(durations[summary.cluster_id])
        summary.mean_segment_ms = float(np.mean(durations[summary.cluster_id]))
        summary.dominant_switch = switches[summary.cluster_id]
        embeddings.append(classical_mds(summary.mean_distance_matrix))

    logger.info(f"Characterized {k} phases over {labels.size} instants in {len(runs)} segments")
    return PhaseReport(
        k=k,
        players=list(features.players),
        pair_labels=[tuple(p) for p in features.pair_labels],
        n_instants=int(labels.size),
        grid_step=grid_step,
        global_mean_distances=[float(v) for v in global_means],
        summaries=summaries,
        embeddings=embeddings,
        transitions=transitions,
        n_segments=len(runs),
        epoch_ms=epoch_ms,
        selection=selection,
        config=config or {},
    )
