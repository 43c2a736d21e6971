from enum import Enum
import math
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SAMPLE_COLUMNS = ["timestamp", "player_id", "x", "y", "z"]


class AttackDirection(str, Enum):
    POSITIVE_X = "PositiveX"
    NEGATIVE_X = "NegativeX"

    def flipped(self) -> "AttackDirection":
        if self is AttackDirection.POSITIVE_X:
            return AttackDirection.NEGATIVE_X
        return AttackDirection.POSITIVE_X


class PhaseCharacter(str, Enum):
    OFFENSIVE = "Offensive"
    DEFENSIVE = "Defensive"
    MIXED = "Mixed"


class PositionSample(BaseModel):
    """One raw sensor reading, coordinates in meters."""

    model_config = ConfigDict(frozen=True)

    timestamp: int = Field(ge=0)
    player_id: int
    x: float
    y: float
    z: float = 0.0

    @field_validator("x", "y", "z")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("coordinate must be finite")
        return value


class CourtDimensions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    length: float = Field(default=28.0, gt=0)
    width: float = Field(default=15.0, gt=0)

    @property
    def half_line(self) -> float:
        return self.length / 2.0


class Period(BaseModel):
    """Half-open in-play interval [start_ms, end_ms)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    start_ms: int = Field(ge=0)
    end_ms: int
    attack_direction: AttackDirection = AttackDirection.POSITIVE_X

    @model_validator(mode="after")
    def _ordered(self) -> "Period":
        if self.start_ms >= self.end_ms:
            raise ValueError(f"period start {self.start_ms} must be before end {self.end_ms}")
        return self

    def contains(self, t_ms: int) -> bool:
        return self.start_ms <= t_ms < self.end_ms


class MatchTimeline(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    periods: List[Period] = Field(default_factory=list)

    @model_validator(mode="after")
    def _sorted_disjoint(self) -> "MatchTimeline":
        for prev, curr in zip(self.periods, self.periods[1:]):
            if curr.start_ms < prev.end_ms:
                raise ValueError(
                    f"periods must be sorted and non-overlapping: "
                    f"[{prev.start_ms}, {prev.end_ms}) then [{curr.start_ms}, {curr.end_ms})"
                )
        return self

    def period_index(self, timestamps: np.ndarray) -> np.ndarray:
        """Index of the period holding each timestamp, -1 outside every period."""
        t = np.asarray(timestamps, dtype=np.int64)
        if not self.periods:
            return np.full(t.shape, -1, dtype=np.int64)
        starts = np.array([p.start_ms for p in self.periods], dtype=np.int64)
        ends = np.array([p.end_ms for p in self.periods], dtype=np.int64)
        idx = np.searchsorted(starts, t, side="right") - 1
        safe = np.clip(idx, 0, len(starts) - 1)
        inside = (idx >= 0) & (t < ends[safe])
        return np.where(inside, idx, -1)

    def flipped(self) -> "MatchTimeline":
        return MatchTimeline(
            periods=[
                p.model_copy(update={"attack_direction": p.attack_direction.flipped()})
                for p in self.periods
            ]
        )

    def rebased(self, shift_ms: int) -> "MatchTimeline":
        """The same periods with ``shift_ms`` as time zero; periods over by then are dropped."""
        return MatchTimeline(
            periods=[
                p.model_copy(update={"start_ms": max(p.start_ms - shift_ms, 0), "end_ms": p.end_ms - shift_ms})
                for p in self.periods
                if p.end_ms > shift_ms
            ]
        )


class RecordFormat(BaseModel):
    """How to read one delimited sample stream.

    ``columns`` maps each sample field to a header name or a 0-based index.
    ``header=None`` sniffs the first line.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    columns: Dict[str, Union[int, str]] = Field(
        default_factory=lambda: {name: i for i, name in enumerate(SAMPLE_COLUMNS)}
    )
    delimiter: str = ","
    scale: float = Field(default=1.0, gt=0)
    header: Optional[bool] = None
    reject_threshold: int = Field(default=100, ge=0)
    encoding: str = "utf-8"

    @field_validator("columns")
    @classmethod
    def _all_fields(cls, value: Dict[str, Union[int, str]]) -> Dict[str, Union[int, str]]:
        missing = [name for name in SAMPLE_COLUMNS if name not in value]
        if missing:
            raise ValueError(f"format is missing columns: {missing}")
        return value


class ParseDiagnostics(BaseModel):
    parsed: int = 0
    rejected: int = 0
    out_of_order: int = 0
    duplicates: int = 0
    rejected_lines: List[int] = Field(default_factory=list)


class RawSession(BaseModel):
    """Time-ordered raw samples plus court metadata.

    ``samples`` is a DataFrame with ``SAMPLE_COLUMNS``; timestamps and player
    ids are int64, coordinates float64 meters.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: pd.DataFrame
    court: CourtDimensions = Field(default_factory=CourtDimensions)
    grid_step: int = Field(default=1, ge=1)
    diagnostics: ParseDiagnostics = Field(default_factory=ParseDiagnostics)
    epoch_ms: int = 0

    @field_validator("samples")
    @classmethod
    def _columns(cls, value: pd.DataFrame) -> pd.DataFrame:
        missing = [c for c in SAMPLE_COLUMNS if c not in value.columns]
        if missing:
            raise ValueError(f"samples frame is missing columns: {missing}")
        return value

    @property
    def roster(self) -> frozenset:
        return frozenset(int(p) for p in pd.unique(self.samples["player_id"]))

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def with_samples(self, samples: pd.DataFrame, **updates) -> "RawSession":
        return self.model_copy(update={"samples": samples.reset_index(drop=True), **updates})


class FrameSeries(BaseModel):
    """Complete regular grid of frames for the active players.

    ``coords`` has shape (n_frames, n_players, 2) and ``imputed_mask``
    (n_frames, n_players); frame i is at ``start_ms + i * grid_step``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid_step: int = Field(ge=1)
    start_ms: int
    players: Tuple[int, ...]
    coords: np.ndarray
    imputed_mask: np.ndarray
    filtered: bool = False

    @model_validator(mode="after")
    def _shapes(self) -> "FrameSeries":
        n_players = len(self.players)
        if self.coords.ndim != 3 or self.coords.shape[1:] != (n_players, 2):
            raise ValueError(f"coords must be (n, {n_players}, 2), got {self.coords.shape}")
        if self.imputed_mask.shape != self.coords.shape[:2]:
            raise ValueError("imputed_mask shape does not match coords")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("frames contain missing or non-finite coordinates")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.coords.shape[0])

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_ms + np.arange(self.n_frames, dtype=np.int64) * self.grid_step

    @property
    def end_ms(self) -> int:
        return self.start_ms + (self.n_frames - 1) * self.grid_step

    def column_names(self) -> List[str]:
        names = ["t_ms"]
        for player in self.players:
            names += [f"p{player}_x", f"p{player}_y"]
        return names

    def to_frame(self) -> pd.DataFrame:
        flat = self.coords.reshape(self.n_frames, -1)
        frame = pd.DataFrame(flat, columns=self.column_names()[1:])
        frame.insert(0, "t_ms", self.timestamps)
        return frame

    @classmethod
    def concat(cls, chunks: List["FrameSeries"]) -> "FrameSeries":
        if not chunks:
            raise ValueError("nothing to concatenate")
        first = chunks[0]
        return cls(
            grid_step=first.grid_step,
            start_ms=first.start_ms,
            players=first.players,
            coords=np.concatenate([c.coords for c in chunks]),
            imputed_mask=np.concatenate([c.imputed_mask for c in chunks]),
            filtered=first.filtered,
        )


class FrameFileInfo(BaseModel):
    """Sidecar of a frames file: the grid it was written on and its time origin."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    grid_step: int = Field(ge=1)
    epoch_ms: int = 0


class FeatureVector(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    distances: np.ndarray
    timestamp: Optional[int] = None


class FeatureMatrix(BaseModel):
    """One pairwise-distance row per instant, columns ordered by ``pair_labels``."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    timestamps: np.ndarray
    values: np.ndarray
    pair_labels: Tuple[Tuple[int, int], ...]
    players: Tuple[int, ...]
    segments: Optional[np.ndarray] = None
    standardized: bool = False

    @model_validator(mode="after")
    def _shapes(self) -> "FeatureMatrix":
        if self.values.ndim != 2:
            raise ValueError("feature values must be 2-D")
        if self.values.shape[1] != len(self.pair_labels):
            raise ValueError("pair_labels do not match feature dimension")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamps do not match row count")
        if self.segments is not None and len(self.segments) != self.values.shape[0]:
            raise ValueError("segments do not match row count")
        return self

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def segment_ids(self) -> np.ndarray:
        if self.segments is None:
            return np.zeros(self.n_rows, dtype=np.int64)
        return self.segments

    def column_names(self) -> List[str]:
        return [f"d_{i}_{j}" for i, j in self.pair_labels]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.column_names())
        frame.insert(0, "segment", self.segment_ids)
        frame.insert(0, "t_ms", self.timestamps)
        return frame

    @classmethod
    def concat(cls, parts: List["FeatureMatrix"]) -> "FeatureMatrix":
        first = parts[0]
        segments = [np.full(p.n_rows, i, dtype=np.int64) if p.segments is None else p.segments
                    for i, p in enumerate(parts)]
        return cls(
            timestamps=np.concatenate([p.timestamps for p in parts]),
            values=np.concatenate([p.values for p in parts]),
            pair_labels=first.pair_labels,
            players=first.players,
            segments=np.concatenate(segments),
            standardized=first.standardized,
        )


class CentroidSeries(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    timestamps: np.ndarray
    xy: np.ndarray

    @classmethod
    def concat(cls, parts: List["CentroidSeries"]) -> "CentroidSeries":
        return cls(
            timestamps=np.concatenate([p.timestamps for p in parts]),
            xy=np.concatenate([p.xy for p in parts]),
        )


class KalmanParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    process_noise_accel: float = Field(default=1.0, ge=0)
    measurement_noise: float = Field(default=0.04, ge=0)
    initial_velocity_variance: float = Field(default=10.0, ge=0)
    dt: float = Field(default=0.001, gt=0)

    @classmethod
    def for_grid_step(cls, grid_step_ms: int, **kwargs) -> "KalmanParams":
        return cls(dt=grid_step_ms / 1000.0, **kwargs)


class FilterState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    state: np.ndarray
    covariance: np.ndarray

    def is_psd(self, tol: float = 1e-9) -> bool:
        cov = self.covariance
        if not np.allclose(cov, cov.T, atol=tol, rtol=0):
            return False
        return bool(np.all(np.linalg.eigvalsh(cov) >= -tol))


class ClusterModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    k: int = Field(ge=1)
    centroids: np.ndarray
    labels: np.ndarray
    within_deviance: float
    between_deviance: float
    total_deviance: float
    iterations: int
    seed: int
    restarts: int = 1
    pair_labels: Tuple[Tuple[int, int], ...] = ()
    wd_history: Tuple[float, ...] = ()

    @property
    def bd_td_ratio(self) -> float:
        if self.total_deviance <= 0:
            return 0.0
        return min(1.0, max(0.0, self.between_deviance / self.total_deviance))


class KSelection(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    candidates: List[Tuple[int, float]]
    chosen_k: int
    min_ratio: float
    min_gain: float
    fallback: bool = False
    model: Optional[ClusterModel] = Field(default=None, exclude=True)


class MdsEmbedding(BaseModel):
    coordinates: List[Tuple[float, float]]
    eigenvalues: Tuple[float, float]
    stress_abs: float
    non_euclidean: bool = False

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.coordinates, dtype=float)


class TransitionMatrix(BaseModel):
    counts: List[List[int]]
    probabilities: List[List[float]]
    empty_rows: List[int] = Field(default_factory=list)

    @property
    def count_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64).reshape(len(self.counts), -1)

    @property
    def probability_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float).reshape(len(self.probabilities), -1)


class PhaseSegment(BaseModel):
    cluster: int
    segment: int
    start_ms: int
    end_ms: int

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


class ClusterSummary(BaseModel):
    cluster_id: int
    size: int
    share: float
    mean_distances: List[float]
    mean_distance_matrix: List[List[float]]
    offense_share: Optional[float] = None
    character: Optional[PhaseCharacter] = None
    profile_deviation: List[float] = Field(default_factory=list)
    tight_pairs: List[Tuple[int, int]] = Field(default_factory=list)
    n_segments: int = 0
    mean_segment_ms: float = 0.0
    dominant_switch: Optional[int] = None


class PhaseReport(BaseModel):
    k: int
    players: List[int]
    pair_labels: List[Tuple[int, int]]
    n_instants: int
    grid_step: int
    global_mean_distances: List[float]
    summaries: List[ClusterSummary]
    embeddings: List[MdsEmbedding]
    transitions: TransitionMatrix
    n_segments: int
    epoch_ms: int = 0
    selection: Optional[KSelection] = None
    config: Dict[str, object] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _one_per_cluster(self) -> "PhaseReport":
        if len(self.summaries) != self.k or len(self.embeddings) != self.k:
            raise ValueError("report needs one summary and one embedding per cluster")
        return self


class Formation(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    anchors: List[Tuple[float, float]] = Field(min_length=5, max_length=5)


class ScheduleSegment(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    formation: str
    duration_ms: int = Field(gt=0)


class Scenario(BaseModel):
    """Synthetic session recipe: formations visited on a schedule."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    formations: List[Formation] = Field(min_length=1)
    schedule: List[ScheduleSegment] = Field(min_length=1)
    jitter_std: float = Field(default=0.3, ge=0)
    sampling_ms: float = Field(default=162.0, gt=0)
    seed: int = 0
    players: Tuple[int, ...] = (1, 2, 3, 4, 5)
    court: CourtDimensions = Field(default_factory=CourtDimensions)
    attack_direction: AttackDirection = AttackDirection.POSITIVE_X
    grid_step: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> "Scenario":
        names = [f.name for f in self.formations]
        if len(set(names)) != len(names):
            raise ValueError("formation names must be unique")
        unknown = {s.formation for s in self.schedule} - set(names)
        if unknown:
            raise ValueError(f"schedule references unknown formations: {sorted(unknown)}")
        if len(self.players) != 5 or len(set(self.players)) != 5:
            raise ValueError("a scenario needs exactly 5 distinct players")
        for formation in self.formations:
            for x, y in formation.anchors:
                if not (0 <= x <= self.court.length and 0 <= y <= self.court.width):
                    raise ValueError(f"anchor ({x}, {y}) of {formation.name} lies outside the court")
        return self

    @property
    def duration_ms(self) -> int:
        return sum(s.duration_ms for s in self.schedule)

    def timeline(self) -> MatchTimeline:
        return MatchTimeline(
            periods=[Period(start_ms=0, end_ms=self.duration_ms, attack_direction=self.attack_direction)]
        )


class GroundTruth(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    timestamps: np.ndarray
    formation: np.ndarray
    offensive: np.ndarray
    formation_names: Tuple[str, ...]


class SessionStats(BaseModel):
    total_samples: int
    n_players: int
    span_ms: int
    overall_rate_hz: float
    overall_mean_interval_ms: float
    mean_interval_ms: Dict[int, Optional[float]]
