import numpy as np

from app.models import CentroidSeries
from app.services import analysis_service, feature_service
from app.services.plot_service import render_plots


def test_render_plots(frames_from, rng, timeline, tmp_path):
    frames = frames_from(rng.uniform(0, 15, size=(60, 5, 2)), grid_step=20)
    features = feature_service.build_feature_matrix(frames)
    labels = np.arange(60) % 3
    centroids = CentroidSeries(timestamps=frames.timestamps, xy=frames.coords.mean(axis=1))
    report = analysis_service.build_phase_report(features, labels, centroids, timeline, grid_step=20)

    written = render_plots(report, tmp_path / "plots")
    names = sorted(p.name for p in written)
    assert names == sorted(["mds_0.svg", "mds_1.svg", "mds_2.svg",
                            "profile_0.svg", "profile_1.svg", "profile_2.svg", "transitions.svg"])
    for path in written:
        text = path.read_text()
        assert text.lstrip().startswith("<?xml")
        assert "<svg" in text

    again = render_plots(report, tmp_path / "again")
    assert [p.read_bytes() for p in written] == [p.read_bytes() for p in again]
