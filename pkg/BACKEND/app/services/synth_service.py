"""Synthetic sessions with known phases, plus brute-force oracles for the clusterer."""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from sklearn.metrics import adjusted_rand_score

from ..errors import ScenarioError
from ..models import (
    AttackDirection,
    Formation,
    GroundTruth,
    RawSession,
    Scenario,
    ScheduleSegment,
)
from .ingest_service import regularize

logger = logging.getLogger(__name__)

MAX_ENUMERATION_POINTS = 12

# Anchors in meters on a 28 x 15 court, players in roster order; the
# attacked basket sits at x = 26.4 when attacking towards positive x.
FORMATION_TEMPLATES: Dict[str, List[Tuple[float, float]]] = {
    # players equally spaced around the arc
    "spread": [(20.0, 7.5), (21.5, 2.5), (21.5, 12.5), (25.5, 1.0), (25.5, 14.0)],
    # every pair closer than usual, packed in the own half
    "compact-spread": [(3.0, 6.0), (3.0, 9.0), (5.0, 7.5), (6.5, 5.5), (6.5, 9.5)],
    # players 1-3 concentrated near the basket, 4 and 5 on the wings
    "three-tight": [(24.0, 7.0), (24.8, 7.8), (24.0, 8.6), (18.0, 2.0), (18.0, 13.0)],
    # players 3-5 concentrated, 1 and 2 outside
    "three-tight-weak": [(17.0, 3.0), (17.0, 12.0), (25.0, 7.0), (25.8, 7.8), (25.0, 8.6)],
    # strung out along the court in transition
    "transition-line": [(4.0, 7.5), (8.0, 7.5), (12.0, 7.5), (16.0, 7.5), (20.0, 7.5)],
    # two guards high, three players low around the own basket
    "zone": [(5.0, 4.0), (5.0, 11.0), (2.5, 2.0), (2.5, 13.0), (3.5, 7.5)],
    # two tight pairs in the corners and a lone player up top
    "corner-pairs": [(22.0, 3.0), (22.0, 12.0), (19.0, 7.5), (22.8, 3.6), (22.8, 11.4)],
    # wide 2-1-2 box across the own half
    "box": [(3.0, 2.0), (3.0, 13.0), (9.0, 2.0), (9.0, 13.0), (6.0, 7.5)],
}


def formation(name: str) -> Formation:
    if name not in FORMATION_TEMPLATES:
        raise ScenarioError(f"unknown formation template {name!r}")
    return Formation(name=name, anchors=FORMATION_TEMPLATES[name])


def eight_formation_scenario(seed: int = 0, jitter_std: float = 0.3, segment_ms: int = 15_000,
                             total_ms: int = 600_000, grid_step: int = 20,
                             sampling_ms: float = 162.0) -> Scenario:
    """All eight templates visited in equal shares over ``total_ms``."""
    names = list(FORMATION_TEMPLATES)
    n_segments = max(1, total_ms // segment_ms)
    # stride 3 is coprime with 8, so every template recurs with varied neighbours
    order = [names[(3 * i) % len(names)] for i in range(n_segments)]
    return Scenario(
        formations=[formation(name) for name in names],
        schedule=[ScheduleSegment(formation=name, duration_ms=segment_ms) for name in order],
        jitter_std=jitter_std,
        sampling_ms=sampling_ms,
        seed=seed,
        grid_step=grid_step,
    )


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read a scenario TOML file.

    Formations may be given inline (``[[formations]]`` with ``anchors``) or
    by template name (``templates = [...]``).
    """
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} does not exist")
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"scenario file {path} is not valid TOML: {e}")

    templates = data.pop("templates", [])
    data["formations"] = [formation(name).model_dump() for name in templates] + data.get("formations", [])
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"invalid scenario {path}: {e}")


def _segment_bounds(scenario: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    names = [f.name for f in scenario.formations]
    ends = np.cumsum([s.duration_ms for s in scenario.schedule]).astype(np.int64)
    ids = np.array([names.index(s.formation) for s in scenario.schedule], dtype=np.int64)
    return ends, ids


def _formation_at(t: np.ndarray, ends: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return ids[np.searchsorted(ends, t, side="right")]


def _sample_times(rng: np.random.Generator, mean_ms: float, duration_ms: int) -> np.ndarray:
    """Integer timestamps from 0 with exponential gaps, strictly increasing, below the end."""
    expected = int(duration_ms / mean_ms * 1.2) + 16
    cumulative = np.cumsum(rng.exponential(mean_ms, size=expected))
    while cumulative[-1] < duration_ms:
        more = np.cumsum(rng.exponential(mean_ms, size=expected)) + cumulative[-1]
        cumulative = np.concatenate([cumulative, more])
    times = np.concatenate([[0], np.floor(cumulative).astype(np.int64)])
    times = np.unique(times)
    return times[times < duration_ms]


def _aligned_truth(samples: pd.DataFrame, ends: np.ndarray, ids: np.ndarray,
                   scenario: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    """Per grid instant, the majority formation of the samples LOCF carries there; ties go to the lower id."""
    tags = samples.assign(x=_formation_at(samples["timestamp"].to_numpy(), ends, ids).astype(np.float64), y=0.0)
    frames = regularize(RawSession(samples=tags), scenario.grid_step, start_ms=0)
    per_player = frames.coords[:, :, 0].astype(np.int64)
    votes = (per_player[:, :, None] == np.arange(len(scenario.formations))).sum(axis=1)
    return frames.timestamps, votes.argmax(axis=1)


def _offensive_formations(scenario: Scenario) -> np.ndarray:
    half = scenario.court.half_line
    centroid_x = np.array([np.mean([x for x, _ in f.anchors]) for f in scenario.formations])
    if scenario.attack_direction is AttackDirection.POSITIVE_X:
        return centroid_x > half
    return centroid_x < half


def generate_session(scenario: Scenario) -> Tuple[RawSession, GroundTruth]:
    """Irregularly sampled players holding formation anchors with Gaussian jitter.

    Every player is sampled at t = 0, then after exponential gaps of mean
    ``sampling_ms``. The ground truth at each instant of the ``grid_step``
    grid is the formation most players' carried-forward samples were drawn
    from, so it lags the schedule exactly as the regularized frames do.
    """
    rng = np.random.default_rng(scenario.seed)
    ends, ids = _segment_bounds(scenario)
    anchors = np.array([f.anchors for f in scenario.formations], dtype=np.float64)

    parts = []
    for slot, player in enumerate(scenario.players):
        times = _sample_times(rng, scenario.sampling_ms, scenario.duration_ms)
        xy = anchors[_formation_at(times, ends, ids), slot]
        xy = xy + rng.normal(0.0, scenario.jitter_std, size=xy.shape)
        parts.append(pd.DataFrame({
            "timestamp": times,
            "player_id": np.full(times.size, player, dtype=np.int64),
            "x": xy[:, 0],
            "y": xy[:, 1],
            "z": np.zeros(times.size),
        }))
    samples = (pd.concat(parts, ignore_index=True)
               .sort_values(["timestamp", "player_id"], kind="mergesort")
               .reset_index(drop=True))

    grid, truth_ids = _aligned_truth(samples, ends, ids, scenario)
    truth = GroundTruth(
        timestamps=grid,
        formation=truth_ids,
        offensive=_offensive_formations(scenario)[truth_ids],
        formation_names=tuple(f.name for f in scenario.formations),
    )
    session = RawSession(samples=samples, court=scenario.court, grid_step=scenario.grid_step)
    logger.info(
        f"Generated {len(samples)} samples for {len(scenario.players)} players over "
        f"{scenario.duration_ms} ms ({len(scenario.schedule)} schedule segments)"
    )
    return session, truth


def _restricted_growth(n: int, k: int) -> Iterator[List[int]]:
    """Every partition of n items into at most k groups, as canonical label lists."""
    labels = [0] * n

    def extend(i: int, used: int) -> Iterator[List[int]]:
        if i == n:
            yield labels
            return
        for group in range(min(used + 1, k)):
            labels[i] = group
            yield from extend(i + 1, max(used, group + 1))

    if n:
        yield from extend(1, 1)


def within_deviance(points: np.ndarray, labels: Sequence[int]) -> float:
    labels = np.asarray(labels)
    total = 0.0
    for group in np.unique(labels):
        members = points[labels == group]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def enumerate_optimal_partition(points, k: int) -> Tuple[Tuple[int, ...], float]:
    """Exhaustive minimum within-deviance partition into at most k groups."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n > MAX_ENUMERATION_POINTS:
        raise ScenarioError(f"refusing to enumerate partitions of {n} points (limit {MAX_ENUMERATION_POINTS})")
    if n == 0 or k < 1:
        raise ScenarioError(f"need at least one point and k >= 1, got n={n}, k={k}")

    best_labels, best_wd = None, np.inf
    for labels in _restricted_growth(n, k):
        wd = within_deviance(X, labels)
        if wd < best_wd:
            best_labels, best_wd = tuple(labels), wd
    return best_labels, best_wd


def adjusted_rand_index(labels_a, labels_b) -> float:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ScenarioError(f"label sequences differ in length: {a.size} vs {b.size}")
    return float(adjusted_rand_score(a, b))
