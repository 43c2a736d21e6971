"""Lloyd's k-means over time instants, deviance decomposition and k selection."""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from ..errors import ClusteringError
from ..models import ClusterModel, FeatureMatrix, KSelection

logger = logging.getLogger(__name__)

BLOCK_ROWS = 65_536
DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6

Features = Union[FeatureMatrix, np.ndarray]


def _values(features: Features) -> np.ndarray:
    """The features as a row-major float64 array; sums depend on memory layout."""
    X = features.values if isinstance(features, FeatureMatrix) else features
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _pair_labels(features: Features):
    return features.pair_labels if isinstance(features, FeatureMatrix) else ()


def _nearest(X: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid (lowest index on ties) and squared distance, streamed over row blocks."""
    labels = np.empty(X.shape[0], dtype=np.int64)
    dist = np.empty(X.shape[0], dtype=np.float64)
    for start in range(0, X.shape[0], BLOCK_ROWS):
        block = X[start:start + BLOCK_ROWS]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        labels[start:start + BLOCK_ROWS] = idx
        dist[start:start + BLOCK_ROWS] = d2[np.arange(len(block)), idx]
    return labels, dist


def _cluster_means(X: np.ndarray, labels: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    # bincount sums in row order, so the reduction is the same on every run
    counts = np.bincount(labels, minlength=k)
    sums = np.column_stack([np.bincount(labels, weights=X[:, d], minlength=k) for d in range(X.shape[1])])
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    return means, counts


def _squared_residuals(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    total = 0.0
    for start in range(0, X.shape[0], BLOCK_ROWS):
        diff = X[start:start + BLOCK_ROWS] - centroids[labels[start:start + BLOCK_ROWS]]
        total += float(np.sum(diff * diff))
    return total


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[rng.integers(n)]
    closest = ((X - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        cumulative = np.cumsum(closest)
        if cumulative[-1] <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
            idx = min(idx, n - 1)
        centroids[i] = X[idx]
        closest = np.minimum(closest, ((X - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _repair_empty(X: np.ndarray, labels: np.ndarray, dist: np.ndarray, k: int) -> None:
    """Reseed each empty cluster at the point farthest from its centroid (in place)."""
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        candidates = np.where(donors, dist, -1.0)
        idx = int(np.argmax(candidates))
        logger.debug(f"Cluster {j} emptied, reseeding at row {idx}")
        counts[labels[idx]] -= 1
        labels[idx] = j
        dist[idx] = 0.0
        counts[j] = 1


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    k = centroids.shape[0]
    history: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels, dist = _nearest(X, centroids)
        _repair_empty(X, labels, dist, k)
        new_centroids, _ = _cluster_means(X, labels, k)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        history.append(_squared_residuals(X, labels, centroids))
        logger.debug(f"Lloyd iteration {iterations}: WD={history[-1]:.6g}, shift={shift:.3g}")
        if shift < tol:
            break
    return centroids, labels, iterations, history


def deviances(features: Features, labels, centroids) -> Tuple[float, float, float]:
    """(WD, BD, TD) for a labelling; WD + BD = TD when centroids are the cluster means."""
    X = _values(features)
    labels = np.asarray(labels, dtype=np.int64)
    centroids = np.asarray(centroids, dtype=np.float64)
    k = centroids.shape[0]
    if labels.shape[0] != X.shape[0]:
        raise ClusteringError(f"{labels.shape[0]} labels for {X.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ClusteringError(f"labels must lie in [0, {k})")
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ClusteringError(f"clusters {empty.tolist()} are empty")

    grand = X.mean(axis=0)
    td = _squared_residuals(X, np.zeros(X.shape[0], dtype=np.int64), grand[None, :])
    wd = _squared_residuals(X, labels, centroids)
    bd = float(np.sum(counts * ((centroids - grand) ** 2).sum(axis=1)))
    return wd, bd, td


def kmeans(features: Features, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
           max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> ClusterModel:
    """Best-of-``restarts`` Lloyd's k-means with k-means++ seeding.

    Restart r seeds ``numpy.random.default_rng(seed + r)``; the restart with
    the smallest within deviance wins, the earliest one on ties.
    """
    X = _values(features)
    if k < 1:
        raise ClusteringError(f"k must be >= 1, got {k}")
    if restarts < 1:
        raise ClusteringError(f"restarts must be >= 1, got {restarts}")
    if X.shape[0] < k:
        raise ClusteringError(f"cannot form {k} clusters from {X.shape[0]} rows")

    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(seed + restart)
        centroids, labels, iterations, history = _lloyd(X, kmeans_plusplus(X, k, rng), max_iter, tol)
        wd = history[-1]
        if best is None or wd < best[3]:
            best = (centroids, labels, iterations, wd, history)

    centroids, labels, iterations, _, history = best
    wd, bd, td = deviances(X, labels, centroids)
    model = ClusterModel(
        k=k,
        centroids=centroids,
        labels=labels,
        within_deviance=wd,
        between_deviance=bd,
        total_deviance=td,
        iterations=iterations,
        seed=seed,
        restarts=restarts,
        pair_labels=_pair_labels(features),
        wd_history=tuple(history),
    )
    logger.info(f"k-means k={k}: BD/TD={model.bd_td_ratio:.4f} after {iterations} iterations")
    return model


def assign(model: ClusterModel, features: Features) -> np.ndarray:
    """Label rows with their nearest fitted centroid."""
    X = _values(features)
    if X.shape[1] != model.centroids.shape[1]:
        raise ClusteringError(
            f"feature dimension {X.shape[1]} does not match centroid dimension {model.centroids.shape[1]}"
        )
    labels, _ = _nearest(X, model.centroids)
    return labels


def select_k(features: Features, k_min: int = 2, k_max: int = 12, min_ratio: float = 0.5,
             min_gain: float = 0.03, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
             max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> KSelection:
    """Smallest k whose BD/TD reaches ``min_ratio`` and whose next gain is below ``min_gain``."""
    X = _values(features)
    if not (1 <= k_min < k_max <= X.shape[0]):
        raise ClusteringError(f"need 1 <= k_min < k_max <= rows, got [{k_min}, {k_max}] with {X.shape[0]} rows")

    ratios = {}
    chosen_model: Optional[ClusterModel] = None
    pending: Optional[ClusterModel] = None
    for k in range(k_min, k_max + 1):
        fitted = kmeans(features, k, seed=seed, restarts=restarts, max_iter=max_iter, tol=tol)
        ratios[k] = fitted.bd_td_ratio
        if chosen_model is None and pending is not None:
            if ratios[pending.k] >= min_ratio and ratios[k] - ratios[pending.k] < min_gain:
                chosen_model = pending
        # only the k awaiting its gain check is kept in memory
        pending = fitted if chosen_model is None else None
    if chosen_model is None and pending is not None and ratios[k_max] >= min_ratio:
        chosen_model = pending
    candidates = [(k, ratios[k]) for k in sorted(ratios)]

    fallback = chosen_model is None
    if fallback:
        gains = {k: ratios[k] - ratios[k - 1] for k in range(k_min + 1, k_max + 1)}
        chosen = max(gains, key=lambda k: (gains[k], -k))
        logger.warning(f"No k in [{k_min}, {k_max}] met the elbow rule, falling back to largest gain k={chosen}")
        chosen_model = kmeans(features, chosen, seed=seed, restarts=restarts, max_iter=max_iter, tol=tol)
    else:
        logger.info(f"Selected k={chosen_model.k} (BD/TD={ratios[chosen_model.k]:.4f})")

    return KSelection(
        candidates=candidates,
        chosen_k=chosen_model.k,
        min_ratio=min_ratio,
        min_gain=min_gain,
        fallback=fallback,
        model=chosen_model,
    )
