from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.special import comb

from app.errors import ScenarioError
from app.models import Scenario, ScheduleSegment
from app.services import clustering_service, feature_service, ingest_service
from app.services.synth_service import (
    FORMATION_TEMPLATES,
    MAX_ENUMERATION_POINTS,
    adjusted_rand_index,
    eight_formation_scenario,
    enumerate_optimal_partition,
    formation,
    generate_session,
    load_scenario,
    within_deviance,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _ari_by_contingency(a, b):
    a, b = np.asarray(a), np.asarray(b)
    table = pd.crosstab(a, b).to_numpy()
    index = comb(table, 2).sum()
    rows = comb(table.sum(axis=1), 2).sum()
    cols = comb(table.sum(axis=0), 2).sum()
    expected = rows * cols / comb(len(a), 2)
    return (index - expected) / ((rows + cols) / 2 - expected)


# scenarios

def test_eight_formation_schedule():
    scenario = eight_formation_scenario()
    assert scenario.duration_ms == 600_000
    assert len(scenario.schedule) == 40
    assert {s.duration_ms for s in scenario.schedule} == {15_000}
    names = list(FORMATION_TEMPLATES)
    assert [s.formation for s in scenario.schedule[:8]] == [names[(3 * i) % 8] for i in range(8)]
    visits = pd.Series([s.formation for s in scenario.schedule]).value_counts()
    assert set(visits.index) == set(names)
    assert set(visits) == {5}


def test_bundled_scenario_file_matches_the_builtin():
    assert load_scenario(SCENARIOS / "eight_formations.toml") == eight_formation_scenario()


def test_load_scenario_with_inline_formations(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(
        'templates = ["spread"]\n'
        'seed = 4\n'
        '[[formations]]\n'
        'name = "stack"\n'
        'anchors = [[10.0, 7.0], [10.5, 7.0], [11.0, 7.0], [11.5, 7.0], [12.0, 7.0]]\n'
        '[[schedule]]\n'
        'formation = "stack"\n'
        'duration_ms = 1000\n'
        '[[schedule]]\n'
        'formation = "spread"\n'
        'duration_ms = 500\n'
    )
    scenario = load_scenario(path)
    assert [f.name for f in scenario.formations] == ["spread", "stack"]
    assert scenario.duration_ms == 1500
    assert scenario.seed == 4


@pytest.mark.parametrize("text", [
    'templates = ["nope"]\nschedule = [{ formation = "nope", duration_ms = 10 }]\n',
    'templates = ["spread"]\nschedule = [{ formation = "box", duration_ms = 10 }]\n',
    'templates = ["spread"\n',
])
def test_load_scenario_errors(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ScenarioError):
        load_scenario(path)


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "absent.toml")


def test_unknown_template():
    with pytest.raises(ScenarioError):
        formation("diamond")


# sessions

def test_zero_jitter_puts_players_on_their_anchors(two_formation_scenario):
    scenario = two_formation_scenario.model_copy(update={"jitter_std": 0.0})
    session, _ = generate_session(scenario)
    samples = session.samples
    spread = np.array(FORMATION_TEMPLATES["spread"])
    compact = np.array(FORMATION_TEMPLATES["compact-spread"])
    in_spread = (samples["timestamp"] // 1000) % 2 == 0
    slot = samples["player_id"].to_numpy() - 1
    expected = np.where(in_spread.to_numpy()[:, None], spread[slot], compact[slot])
    np.testing.assert_array_equal(samples[["x", "y"]].to_numpy(), expected)


def test_sessions_are_ordered_and_start_together(two_formation_scenario):
    session, truth = generate_session(two_formation_scenario)
    samples = session.samples
    key = list(zip(samples["timestamp"], samples["player_id"]))
    assert key == sorted(key)
    assert len(set(key)) == len(key)
    assert sorted(samples.loc[samples["timestamp"] == 0, "player_id"]) == [1, 2, 3, 4, 5]
    assert samples["timestamp"].max() < two_formation_scenario.duration_ms
    assert session.epoch_ms == 0
    assert truth.timestamps[0] == 0


@pytest.mark.parametrize("sampling_ms", [40.0, 300.0])
def test_ground_truth_follows_the_carried_forward_samples(two_formation_scenario, sampling_ms):
    scenario = two_formation_scenario.model_copy(update={"sampling_ms": sampling_ms})
    session, truth = generate_session(scenario)
    samples = session.samples
    t = truth.timestamps
    assert t[0] == 0
    assert np.all(np.diff(t) == 20)
    assert t[-1] == samples["timestamp"].max() // 20 * 20
    assert truth.formation_names == ("spread", "compact-spread")

    # each player votes for the shape of its latest sample at or before the instant
    spread_votes = 0
    for player in scenario.players:
        times = samples.loc[samples["player_id"] == player, "timestamp"].to_numpy()
        latest = times[np.searchsorted(times, t, side="right") - 1]
        spread_votes = spread_votes + ((latest // 1000) % 2 == 0)
    np.testing.assert_array_equal(truth.formation, np.where(spread_votes >= 3, 0, 1))
    scheduled = (t // 1000) % 2
    if sampling_ms > 100:
        assert np.any(truth.formation != scheduled)
    # the spread shape sits in the attacking half, the compact one in the own half
    np.testing.assert_array_equal(truth.offensive, truth.formation == 0)


def test_sampling_rate(two_formation_scenario):
    scenario = two_formation_scenario.model_copy(update={
        "sampling_ms": 162.0,
        "schedule": [ScheduleSegment(formation="spread", duration_ms=120_000)],
    })
    session, _ = generate_session(scenario)
    stats = ingest_service.session_stats(session)
    assert stats.overall_rate_hz == pytest.approx(5 * 1000 / 162.0, rel=0.1)
    for gap in stats.mean_interval_ms.values():
        assert gap == pytest.approx(162.0, rel=0.15)


def test_generation_is_deterministic(two_formation_scenario):
    a, truth_a = generate_session(two_formation_scenario)
    b, truth_b = generate_session(two_formation_scenario)
    pd.testing.assert_frame_equal(a.samples, b.samples, check_exact=True)
    np.testing.assert_array_equal(truth_a.formation, truth_b.formation)

    c, _ = generate_session(two_formation_scenario.model_copy(update={"seed": 4}))
    assert not a.samples.equals(c.samples)


def test_two_formations_are_recovered(two_formation_scenario):
    session, truth = generate_session(two_formation_scenario)
    frames = ingest_service.regularize(session, grid_step=two_formation_scenario.grid_step)
    np.testing.assert_array_equal(frames.timestamps, truth.timestamps)

    model = clustering_service.kmeans(feature_service.build_feature_matrix(frames), 2)
    # LOCF frames just after a switch mix both shapes
    clean = (truth.timestamps % 1000) >= 500
    assert adjusted_rand_index(model.labels[clean], truth.formation[clean]) == pytest.approx(1.0)


# oracles

def test_enumeration_finds_the_obvious_split():
    labels, wd = enumerate_optimal_partition([0.0, 1.0, 10.0, 11.0], 2)
    assert labels == (0, 0, 1, 1)
    assert wd == pytest.approx(1.0)


def test_enumeration_with_one_group_is_total_deviance(rng):
    X = rng.normal(size=(7, 2))
    labels, wd = enumerate_optimal_partition(X, 1)
    assert labels == (0,) * 7
    assert wd == pytest.approx(((X - X.mean(axis=0)) ** 2).sum())


def test_enumeration_beats_every_random_partition(rng):
    X = rng.uniform(0, 10, size=(8, 2))
    _, best = enumerate_optimal_partition(X, 3)
    for _ in range(200):
        labels = rng.integers(0, 3, size=8)
        assert within_deviance(X, labels) >= best - 1e-12


@pytest.mark.parametrize("points, k", [
    (np.zeros((MAX_ENUMERATION_POINTS + 1, 2)), 2),
    (np.zeros((0, 2)), 2),
    (np.zeros((4, 2)), 0),
])
def test_enumeration_limits(points, k):
    with pytest.raises(ScenarioError):
        enumerate_optimal_partition(points, k)


def test_ari_ignores_label_names():
    assert adjusted_rand_index([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == pytest.approx(1.0)


def test_ari_matches_contingency_formula(rng):
    for _ in range(20):
        a = rng.integers(0, 4, size=60)
        b = np.where(rng.random(60) < 0.6, a, rng.integers(0, 4, size=60))
        assert adjusted_rand_index(a, b) == pytest.approx(_ari_by_contingency(a, b), abs=1e-12)


def test_ari_needs_equal_lengths():
    with pytest.raises(ScenarioError):
        adjusted_rand_index([0, 1], [0, 1, 1])


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(formations=[formation("spread")],
                 schedule=[ScheduleSegment(formation="spread", duration_ms=100)],
                 players=(1, 2, 3, 4))
