"""Inter-player distance features and the team centroid."""

import logging
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import FeatureError
from ..models import CentroidSeries, FeatureMatrix, FeatureVector, FrameSeries

logger = logging.getLogger(__name__)

ROSTER_SIZE = 5
BLOCK_ROWS = 250_000


def pair_labels(players: Sequence[int]) -> Tuple[Tuple[int, int], ...]:
    """Lexicographic (i, j), i before j in roster order."""
    return tuple((int(a), int(b)) for a, b in combinations(players, 2))


def _pair_index(n_players: int) -> Tuple[np.ndarray, np.ndarray]:
    first, second = zip(*combinations(range(n_players), 2))
    return np.array(first), np.array(second)


def _distances(coords: np.ndarray) -> np.ndarray:
    """coords (n, p, 2) -> (n, p*(p-1)/2) Euclidean distances, in row blocks."""
    i, j = _pair_index(coords.shape[1])
    out = np.empty((coords.shape[0], len(i)), dtype=np.float64)
    for start in range(0, coords.shape[0], BLOCK_ROWS):
        block = coords[start:start + BLOCK_ROWS]
        diff = block[:, i, :] - block[:, j, :]
        out[start:start + BLOCK_ROWS] = np.hypot(diff[..., 0], diff[..., 1])
    return out


def pairwise_distances(frame, timestamp: Optional[int] = None) -> FeatureVector:
    points = np.asarray(frame, dtype=np.float64)
    if points.shape != (ROSTER_SIZE, 2):
        raise FeatureError(f"a frame needs exactly {ROSTER_SIZE} (x, y) points, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise FeatureError("frame contains a non-finite coordinate")
    return FeatureVector(distances=_distances(points[None])[0], timestamp=timestamp)


def build_feature_matrix(frames: FrameSeries, segment: Optional[int] = None) -> FeatureMatrix:
    """One distance row per frame, in frame order."""
    if len(frames.players) != ROSTER_SIZE:
        raise FeatureError(f"features are defined for {ROSTER_SIZE} players, frames hold {len(frames.players)}")
    values = _distances(frames.coords)
    segments = None if segment is None else np.full(frames.n_frames, segment, dtype=np.int64)
    return FeatureMatrix(
        timestamps=frames.timestamps,
        values=values,
        pair_labels=pair_labels(frames.players),
        players=frames.players,
        segments=segments,
    )


def build_feature_matrices(series: List[FrameSeries]) -> FeatureMatrix:
    """Concatenate per-period feature matrices, tagging each row with its period."""
    if not series:
        raise FeatureError("no frames to build features from")
    parts = [build_feature_matrix(frames, segment=i) for i, frames in enumerate(series)]
    matrix = parts[0] if len(parts) == 1 else FeatureMatrix.concat(parts)
    logger.info(f"Built {matrix.n_rows} x {matrix.dim} feature matrix from {len(series)} frame series")
    return matrix


def centroid_series(frames: FrameSeries) -> CentroidSeries:
    """Mean (x, y) of the players at every instant."""
    return CentroidSeries(timestamps=frames.timestamps, xy=frames.coords.mean(axis=1))


def standardize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Z-score each distance column; constant columns are only centred."""
    mean = matrix.values.mean(axis=0)
    std = matrix.values.std(axis=0)
    std[std == 0] = 1.0
    return matrix.model_copy(update={"values": (matrix.values - mean) / std, "standardized": True})
