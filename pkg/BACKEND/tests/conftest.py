import logging

import numpy as np
import pandas as pd
import pytest

from app.models import (
    SAMPLE_COLUMNS,
    FrameSeries,
    MatchTimeline,
    Period,
    RawSession,
    Scenario,
    ScheduleSegment,
)
from app.services.synth_service import formation
from app.settings import get_settings


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(autouse=True)
def restore_logging():
    """The CLI reconfigures the root logger on every call."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def session_from():
    """Build a RawSession from (timestamp, player, x, y) rows, sorted by time."""

    def build(rows, **kwargs):
        frame = pd.DataFrame([(t, p, x, y, 0.0) for t, p, x, y in rows], columns=SAMPLE_COLUMNS)
        frame = frame.astype({"timestamp": "int64", "player_id": "int64", "x": "float64", "y": "float64"})
        frame = frame.sort_values("timestamp", kind="mergesort").reset_index(drop=True)
        return RawSession(samples=frame, **kwargs)

    return build


@pytest.fixture
def frames_from():
    def build(coords, start_ms=0, grid_step=1, players=(1, 2, 3, 4, 5)):
        coords = np.asarray(coords, dtype=np.float64)
        return FrameSeries(
            grid_step=grid_step,
            start_ms=start_ms,
            players=tuple(players),
            coords=coords,
            imputed_mask=np.zeros(coords.shape[:2], dtype=bool),
        )

    return build


@pytest.fixture
def timeline():
    return MatchTimeline(periods=[Period(start_ms=0, end_ms=10_000)])


@pytest.fixture
def two_formation_scenario():
    """Four seconds alternating a spread and a compact shape, densely sampled."""
    return Scenario(
        formations=[formation("spread"), formation("compact-spread")],
        schedule=[
            ScheduleSegment(formation="spread", duration_ms=1000),
            ScheduleSegment(formation="compact-spread", duration_ms=1000),
            ScheduleSegment(formation="spread", duration_ms=1000),
            ScheduleSegment(formation="compact-spread", duration_ms=1000),
        ],
        jitter_std=0.2,
        sampling_ms=40.0,
        seed=3,
        grid_step=20,
    )
