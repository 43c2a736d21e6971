import json

import numpy as np
import pandas as pd
import pytest

from app.errors import ArtifactError
from app.models import CentroidSeries, KSelection, MatchTimeline, Period, PhaseCharacter
from app.services import analysis_service, clustering_service, feature_service
from app.storage import ArtifactStore, atomic_write


@pytest.fixture
def store(tmp_path):
    return ArtifactStore(tmp_path / "run")


@pytest.fixture
def features(frames_from, rng):
    series = [frames_from(rng.uniform(0, 15, size=(30, 5, 2)), grid_step=20),
              frames_from(rng.uniform(0, 15, size=(20, 5, 2)), start_ms=5000, grid_step=20)]
    return feature_service.build_feature_matrices(series)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "out.csv"
    with pytest.raises(RuntimeError):
        with atomic_write(target) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []


def test_atomic_write_replaces_existing_file(tmp_path):
    target = tmp_path / "out.txt"
    target.write_text("old")
    with atomic_write(target) as fh:
        fh.write("new")
    assert target.read_text() == "new"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_frames_round_trip(store, frames_from, rng):
    first = frames_from(rng.normal(10, 3, size=(25, 5, 2)), start_ms=40, grid_step=20)
    second = frames_from(rng.normal(10, 3, size=(10, 5, 2)), start_ms=2000, grid_step=20)
    assert store.write_frames([(0, first), (1, second)]) == 35

    series = store.read_frames()
    assert len(series) == 2
    for read, written in zip(series, (first, second)):
        assert (read.start_ms, read.grid_step, read.players) == (written.start_ms, 20, (1, 2, 3, 4, 5))
        np.testing.assert_array_equal(read.coords, written.coords)


def test_frames_split_on_segment_change_even_without_a_gap(store, frames_from):
    a = frames_from(np.zeros((3, 5, 2)), grid_step=20)
    b = frames_from(np.ones((3, 5, 2)), start_ms=60, grid_step=20)
    store.write_frames([(0, a), (1, b)])
    assert [s.n_frames for s in store.read_frames()] == [3, 3]
    assert [s.n_frames for s in store.read_frames(grid_step=20)] == [3, 3]


def test_frames_errors(store):
    with pytest.raises(ArtifactError):
        store.read_frames()
    with pytest.raises(ArtifactError):
        store.write_frames([])
    assert not store.path(ArtifactStore.FRAMES_FILE).exists()

    header = "t_ms,segment,p1_x,p1_y\n"
    store.path("frames.csv").write_text(header + "0,0,1.0,1.0\n20,0,1.0,1.0\n")
    with pytest.raises(ArtifactError, match="frames.json"):
        store.read_frames()

    store.path("frames.json").write_text('{"grid_step": 0}')
    with pytest.raises(ArtifactError):
        store.read_frames()

    store.path("frames.json").write_text('{"grid_step": 20, "epoch_ms": 0}')
    assert [s.n_frames for s in store.read_frames()] == [2]
    store.path("frames.csv").write_text(header + "20,0,1.0,1.0\n0,0,1.0,1.0\n")
    with pytest.raises(ArtifactError):
        store.read_frames()
    store.path("frames.csv").write_text(header + "0,0,1.0,1.0\n30,0,1.0,1.0\n")
    with pytest.raises(ArtifactError, match="off its 20 ms grid"):
        store.read_frames()


def test_frames_keep_their_grid_and_epoch(store, frames_from):
    store.write_frames([(0, frames_from(np.zeros((4, 5, 2)), grid_step=40))], epoch_ms=1234)
    info = store.read_frame_info()
    assert (info.grid_step, info.epoch_ms) == (40, 1234)
    # one long gap in the file is a break, not a coarser grid
    store.write_frames([(0, frames_from(np.zeros((2, 5, 2)), grid_step=40)),
                        (0, frames_from(np.zeros((2, 5, 2)), start_ms=400, grid_step=40))])
    assert [(s.start_ms, s.grid_step) for s in store.read_frames()] == [(0, 40), (400, 40)]

    with pytest.raises(ArtifactError, match="--grid-ms 40"):
        store.read_frames(grid_step=20)
    with pytest.raises(ArtifactError):
        store.write_frames([(0, frames_from(np.zeros((2, 5, 2)), grid_step=40)),
                            (1, frames_from(np.zeros((2, 5, 2)), start_ms=400, grid_step=20))])


def test_discard(store):
    store.root.mkdir(parents=True)
    for name in ("mds_0.csv", "mds_1.csv", "labels.csv", "keep.txt"):
        store.path(name).write_text("x")
    (store.root / "plots").mkdir()
    (store.root / "plots" / "a.svg").write_text("<svg/>")

    removed = store.discard(["mds_*.csv", "plots", "labels.csv", "report.json"])
    assert sorted(p.name for p in removed) == ["labels.csv", "mds_0.csv", "mds_1.csv", "plots"]
    assert [p.name for p in store.root.iterdir()] == ["keep.txt"]
    assert ArtifactStore(store.root / "missing").discard(["*.csv"]) == []


def test_features_round_trip(store, features):
    store.write_features(features)
    read = store.read_features()
    np.testing.assert_array_equal(read.values, features.values)
    np.testing.assert_array_equal(read.timestamps, features.timestamps)
    np.testing.assert_array_equal(read.segment_ids, features.segment_ids)
    assert read.pair_labels == features.pair_labels
    assert read.players == (1, 2, 3, 4, 5)


def test_labels_round_trip(store):
    store.write_labels([0, 20, 40], np.array([2, 0, 1]))
    t, labels = store.read_labels()
    assert t.tolist() == [0, 20, 40]
    assert labels.tolist() == [2, 0, 1]

    store.path("labels.csv").write_text("time,label\n0,1\n")
    with pytest.raises(ArtifactError):
        store.read_labels()


def test_model_round_trip(store, features):
    model = clustering_service.kmeans(features, 3, restarts=2)
    selection = KSelection(candidates=[(2, 0.25), (3, 0.5)], chosen_k=3, min_ratio=0.5, min_gain=0.03,
                           fallback=True, model=model)
    path = store.write_model(model, selection)
    first = path.read_bytes()

    read, read_selection = store.read_model()
    np.testing.assert_array_equal(read.centroids, model.centroids)
    assert read.within_deviance == model.within_deviance
    assert read.bd_td_ratio == model.bd_td_ratio
    assert read.pair_labels == features.pair_labels
    assert read_selection.candidates == selection.candidates
    assert read_selection.fallback

    store.write_model(read, read_selection)
    assert path.read_bytes() == first


def test_model_without_selection(store, features):
    store.write_model(clustering_service.kmeans(features, 2, restarts=1))
    _, selection = store.read_model()
    assert selection is None


def test_broken_model_file(store):
    store.root.mkdir(parents=True)
    store.path("model.txt").write_text("k = 2\ncentroids = [\n")
    with pytest.raises(ArtifactError):
        store.read_model()
    store.path("model.txt").write_text("k = 2\n")
    with pytest.raises(ArtifactError):
        store.read_model()


def test_report_tables(store, features):
    labels = np.arange(features.n_rows) % 2
    centroids = CentroidSeries(timestamps=features.timestamps,
                               xy=np.column_stack([np.where(labels == 0, 20.0, 5.0), np.full(labels.size, 7.0)]))
    report = analysis_service.build_phase_report(
        features, labels, centroids, MatchTimeline(periods=[Period(start_ms=0, end_ms=10_000)]), grid_step=20,
    )
    store.write_report(report)

    summaries = pd.read_csv(store.path("summaries.csv"))
    assert summaries["cluster"].tolist() == [0, 1]
    assert summaries["character"].tolist() == [PhaseCharacter.OFFENSIVE.value, PhaseCharacter.DEFENSIVE.value]
    assert "d_1_2" in summaries.columns and "dev_d_4_5" in summaries.columns

    transitions = pd.read_csv(store.path("transitions.csv"))
    assert list(transitions.columns) == ["from", "to", "count", "probability"]
    assert len(transitions) == 4
    assert transitions["count"].sum() == report.transitions.count_array.sum()

    mds = pd.read_csv(store.path("mds_1.csv"))
    assert mds["player"].tolist() == [1, 2, 3, 4, 5]

    assert json.loads(store.path("report.json").read_text())["k"] == 2
    assert store.read_report() == report
