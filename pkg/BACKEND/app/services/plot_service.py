"""SVG figures derived from a PhaseReport."""

import logging
from pathlib import Path
from typing import List, Optional, Union

import matplotlib
matplotlib.use("Agg")
from matplotlib.figure import Figure
import numpy as np

from ..models import PhaseReport
from ..settings import Settings, get_settings
from ..storage import atomic_write

logger = logging.getLogger(__name__)

# fixed ids and no timestamp keep the SVG text identical across runs
SVG_METADATA = {"Date": None}
matplotlib.rcParams["svg.hashsalt"] = "phases"


def _save(fig: Figure, path: Path, settings: Settings) -> Path:
    with atomic_write(path) as fh:
        fig.savefig(fh, format="svg", dpi=settings.PLOT_DPI, metadata=SVG_METADATA)
    return path


def mds_figure(report: PhaseReport, cluster: int) -> Figure:
    """Players placed by classical MDS of the cluster's mean distances."""
    points = report.embeddings[cluster].points
    fig = Figure(figsize=(4, 4))
    ax = fig.add_subplot()
    ax.scatter(points[:, 0], points[:, 1], s=60)
    for player, (x, y) in zip(report.players, points):
        ax.annotate(str(player), (x, y), textcoords="offset points", xytext=(5, 5))
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("dimension 1 (m)")
    ax.set_ylabel("dimension 2 (m)")
    summary = report.summaries[cluster]
    ax.set_title(f"C{cluster + 1}: {summary.share:.1%} of instants")
    return fig


def profile_figure(report: PhaseReport, cluster: int) -> Figure:
    """Cluster mean distance per pair against the match-wide mean."""
    labels = [f"{i}-{j}" for i, j in report.pair_labels]
    idx = np.arange(len(labels))
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    ax.bar(idx - 0.2, report.summaries[cluster].mean_distances, width=0.4, label=f"C{cluster + 1}")
    ax.bar(idx + 0.2, report.global_mean_distances, width=0.4, label="match mean", color="0.7")
    ax.set_xticks(idx)
    ax.set_xticklabels(labels, rotation=45)
    ax.set_ylabel("mean distance (m)")
    ax.legend()
    fig.tight_layout()
    return fig


def transition_figure(report: PhaseReport) -> Figure:
    probabilities = report.transitions.probability_array
    names = [f"C{c + 1}" for c in range(report.k)]
    fig = Figure(figsize=(5, 4.5))
    ax = fig.add_subplot()
    image = ax.imshow(probabilities, vmin=0.0, vmax=1.0, cmap="Blues")
    ax.set_xticks(range(report.k))
    ax.set_xticklabels(names)
    ax.set_yticks(range(report.k))
    ax.set_yticklabels(names)
    ax.set_xlabel("to")
    ax.set_ylabel("from")
    for a in range(report.k):
        for b in range(report.k):
            if probabilities[a, b] > 0:
                ax.text(b, a, f"{probabilities[a, b]:.0%}", ha="center", va="center", fontsize="small")
    fig.colorbar(image, ax=ax, label="switch frequency")
    fig.tight_layout()
    return fig


def render_plots(report: PhaseReport, out_dir: Union[str, Path],
                 settings: Optional[Settings] = None) -> List[Path]:
    """Write the MDS and profile plot of every cluster and the transition heatmap."""
    settings = settings or get_settings()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"font.size": settings.SVG_FONT_SIZE}):
        written = []
        for cluster in range(report.k):
            written.append(_save(mds_figure(report, cluster), out_dir / f"mds_{cluster}.svg", settings))
            written.append(_save(profile_figure(report, cluster), out_dir / f"profile_{cluster}.svg", settings))
        written.append(_save(transition_figure(report), out_dir / "transitions.svg", settings))
    logger.info(f"Wrote {len(written)} plots to {out_dir}")
    return written
