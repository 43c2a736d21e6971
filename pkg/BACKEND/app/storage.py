"""Artifact files: every stage export and import, written atomically."""

from contextlib import contextmanager
import json
import logging
import os
from pathlib import Path
import re
import shutil
import tempfile
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import ArtifactError
from .models import (
    SAMPLE_COLUMNS,
    ClusterModel,
    FeatureMatrix,
    FrameFileInfo,
    FrameSeries,
    KSelection,
    PhaseReport,
    RawSession,
)

logger = logging.getLogger(__name__)

FRAMES_FILE = "frames.csv"
FRAMES_INFO_FILE = "frames.json"
FILTERED_FILE = "frames_filtered.csv"
FILTERED_INFO_FILE = "frames_filtered.json"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"
MODEL_FILE = "model.txt"
SUMMARIES_FILE = "summaries.csv"
TRANSITIONS_FILE = "transitions.csv"
REPORT_FILE = "report.json"
PLOTS_DIR = "plots"

_PLAYER_COLUMN = re.compile(r"^p(-?\d+)_([xy])$")
_PAIR_COLUMN = re.compile(r"^d_(-?\d+)_(-?\d+)$")


@contextmanager
def atomic_write(path: Union[str, Path], mode: str = "w") -> Iterator:
    """Write to a temp file beside ``path`` and move it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "b" not in mode
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({"newline": "", "encoding": "utf-8"} if text else {})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _read_csv(path: Path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip", **kwargs)
    except FileNotFoundError:
        logger.error(f"Missing artifact {path}")
        raise ArtifactError(f"artifact {path} does not exist; run the previous stage first")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        logger.error(f"Unreadable artifact {path}: {e}")
        raise ArtifactError(f"artifact {path} is malformed: {e}")


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot write {type(value).__name__} to a model file")


def write_samples(session: RawSession, path: Union[str, Path]) -> Path:
    """Samples in the default ingest format (header, comma separated)."""
    path = Path(path)
    with atomic_write(path) as fh:
        session.samples[SAMPLE_COLUMNS].to_csv(fh, index=False)
    logger.info(f"Wrote {session.n_samples} samples to {path}")
    return path


class ArtifactStore:
    """Reader and writer for the files one pipeline run leaves in its output directory."""

    FRAMES_FILE = FRAMES_FILE
    FILTERED_FILE = FILTERED_FILE

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def info_path(self, name: str = FRAMES_FILE) -> Path:
        return self.path(name).with_suffix(".json")

    def discard(self, patterns: Iterable[str]) -> List[Path]:
        """Delete whatever matches ``patterns`` in the output directory."""
        removed = []
        if not self.root.is_dir():
            return removed
        for pattern in patterns:
            for path in sorted(self.root.glob(pattern)):
                if path.is_dir():
                    shutil.rmtree(path)
                else:
                    path.unlink()
                removed.append(path)
        if removed:
            logger.info(f"Removed {len(removed)} stale artifacts from {self.root}")
        return removed

    # frames

    def write_frames(self, chunks: Iterable[Tuple[int, FrameSeries]], name: str = FRAMES_FILE,
                     epoch_ms: int = 0) -> int:
        """Stream (segment, chunk) pairs, all periods back to back, into a frames file.

        The grid step and time origin go to a JSON sidecar next to it.
        """
        path = self.path(name)
        total, step = 0, None
        with atomic_write(path) as fh:
            for segment, chunk in chunks:
                if step is None:
                    step = chunk.grid_step
                elif chunk.grid_step != step:
                    raise ArtifactError(f"cannot mix a {chunk.grid_step} ms grid into {step} ms frames")
                frame = chunk.to_frame()
                frame.insert(1, "segment", segment)
                frame.to_csv(fh, index=False, header=total == 0)
                total += chunk.n_frames
            if total == 0:
                raise ArtifactError("no frames to write")
        info = FrameFileInfo(grid_step=step, epoch_ms=epoch_ms)
        with atomic_write(self.info_path(name)) as fh:
            fh.write(info.model_dump_json(indent=2) + "\n")
        logger.info(f"Wrote {total} frames on a {step} ms grid to {path}")
        return total

    def read_frame_info(self, name: str = FRAMES_FILE) -> FrameFileInfo:
        path = self.info_path(name)
        try:
            return FrameFileInfo.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ArtifactError(f"artifact {path} does not exist; rerun the stage that writes {name}")
        except ValidationError as e:
            raise ArtifactError(f"{path} is not a valid frames sidecar: {e}")

    def read_frames(self, grid_step: Optional[int] = None, name: str = FRAMES_FILE) -> List[FrameSeries]:
        """A frames file as contiguous series, split per segment and wherever the grid breaks.

        The step comes from the sidecar; a ``grid_step`` that disagrees with it is an error.
        """
        path = self.path(name)
        frame = _read_csv(path)
        if list(frame.columns[:2]) != ["t_ms", "segment"] or frame.empty:
            raise ArtifactError(f"{path} needs t_ms and segment columns and at least one row")
        players = []
        for column in frame.columns[2::2]:
            match = _PLAYER_COLUMN.match(column)
            if not match:
                raise ArtifactError(f"unexpected column {column!r} in {path}")
            players.append(int(match.group(1)))

        t = frame["t_ms"].to_numpy(dtype=np.int64)
        segment = frame["segment"].to_numpy(dtype=np.int64)
        coords = frame.iloc[:, 2:].to_numpy(dtype=np.float64).reshape(len(frame), len(players), 2)
        gaps = np.diff(t)
        within = gaps[segment[1:] == segment[:-1]]
        if np.any(within <= 0):
            raise ArtifactError(f"{path} timestamps are not increasing")
        step = self.read_frame_info(name).grid_step
        if grid_step is not None and grid_step != step:
            logger.error(f"{path} is on a {step} ms grid, configured {grid_step} ms")
            raise ArtifactError(
                f"{path} was written on a {step} ms grid but the configured grid is {grid_step} ms; "
                f"pass --grid-ms {step} or rerun ingest"
            )
        if np.any(within % step):
            raise ArtifactError(f"{path} has timestamps off its {step} ms grid")
        breaks = np.flatnonzero((gaps != step) | (segment[1:] != segment[:-1])) + 1
        series = []
        for start, stop in zip(np.concatenate([[0], breaks]), np.concatenate([breaks, [len(t)]])):
            series.append(FrameSeries(
                grid_step=step,
                start_ms=int(t[start]),
                players=tuple(players),
                coords=coords[start:stop],
                imputed_mask=np.zeros((stop - start, len(players)), dtype=bool),
            ))
        logger.info(f"Read {len(t)} frames in {len(series)} contiguous series from {path}")
        return series

    # features

    def write_features(self, matrix: FeatureMatrix) -> Path:
        path = self.path(FEATURES_FILE)
        with atomic_write(path) as fh:
            matrix.to_frame().to_csv(fh, index=False)
        logger.info(f"Wrote {matrix.n_rows} x {matrix.dim} features to {path}")
        return path

    def read_features(self) -> FeatureMatrix:
        path = self.path(FEATURES_FILE)
        frame = _read_csv(path)
        pairs = []
        for column in frame.columns[2:]:
            match = _PAIR_COLUMN.match(column)
            if not match:
                raise ArtifactError(f"unexpected column {column!r} in {path}")
            pairs.append((int(match.group(1)), int(match.group(2))))
        if list(frame.columns[:2]) != ["t_ms", "segment"] or not pairs:
            raise ArtifactError(f"{path} needs t_ms, segment and distance columns")
        first = pairs[0][0]
        players = (first,) + tuple(b for a, b in pairs if a == first)
        return FeatureMatrix(
            timestamps=frame["t_ms"].to_numpy(dtype=np.int64),
            values=np.ascontiguousarray(frame.iloc[:, 2:].to_numpy(dtype=np.float64)),
            pair_labels=tuple(pairs),
            players=players,
            segments=frame["segment"].to_numpy(dtype=np.int64),
        )

    # labels and model

    def write_labels(self, timestamps, labels) -> Path:
        path = self.path(LABELS_FILE)
        with atomic_write(path) as fh:
            pd.DataFrame({"t_ms": np.asarray(timestamps, dtype=np.int64),
                          "cluster": np.asarray(labels, dtype=np.int64)}).to_csv(fh, index=False)
        logger.info(f"Wrote {len(labels)} labels to {path}")
        return path

    def read_labels(self) -> Tuple[np.ndarray, np.ndarray]:
        frame = _read_csv(self.path(LABELS_FILE))
        if list(frame.columns) != ["t_ms", "cluster"]:
            raise ArtifactError(f"{self.path(LABELS_FILE)} needs columns t_ms, cluster")
        return frame["t_ms"].to_numpy(dtype=np.int64), frame["cluster"].to_numpy(dtype=np.int64)

    def write_model(self, model: ClusterModel, selection: Optional[KSelection] = None) -> Path:
        """Centroids and deviances as TOML with full-precision floats."""
        path = self.path(MODEL_FILE)
        lines = [
            f"k = {model.k}",
            f"seed = {model.seed}",
            f"restarts = {model.restarts}",
            f"iterations = {model.iterations}",
            f"within_deviance = {_toml_value(model.within_deviance)}",
            f"between_deviance = {_toml_value(model.between_deviance)}",
            f"total_deviance = {_toml_value(model.total_deviance)}",
            f"bd_td_ratio = {_toml_value(model.bd_td_ratio)}",
            f"pair_labels = {_toml_value([list(p) for p in model.pair_labels])}",
            "centroids = [",
            *(f"  {_toml_value(row)}," for row in model.centroids),
            "]",
        ]
        if selection is not None:
            lines += [
                "",
                "[selection]",
                f"chosen_k = {selection.chosen_k}",
                f"min_ratio = {_toml_value(selection.min_ratio)}",
                f"min_gain = {_toml_value(selection.min_gain)}",
                f"fallback = {_toml_value(selection.fallback)}",
                f"candidates = {_toml_value([[k, r] for k, r in selection.candidates])}",
            ]
        with atomic_write(path) as fh:
            fh.write("\n".join(lines) + "\n")
        logger.info(f"Wrote k={model.k} model to {path}")
        return path

    def read_model(self) -> Tuple[ClusterModel, Optional[KSelection]]:
        path = self.path(MODEL_FILE)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ArtifactError(f"artifact {path} does not exist; run the fit stage first")
        except tomllib.TOMLDecodeError as e:
            raise ArtifactError(f"{path} is not a valid model file: {e}")

        try:
            model = ClusterModel(
                k=data["k"],
                centroids=np.asarray(data["centroids"], dtype=np.float64).reshape(data["k"], -1),
                labels=np.empty(0, dtype=np.int64),
                within_deviance=data["within_deviance"],
                between_deviance=data["between_deviance"],
                total_deviance=data["total_deviance"],
                iterations=data["iterations"],
                seed=data["seed"],
                restarts=data["restarts"],
                pair_labels=tuple(tuple(p) for p in data["pair_labels"]),
            )
        except KeyError as e:
            raise ArtifactError(f"{path} is missing key {e}")

        selection = None
        if "selection" in data:
            s = data["selection"]
            selection = KSelection(
                candidates=[(int(k), float(r)) for k, r in s["candidates"]],
                chosen_k=s["chosen_k"],
                min_ratio=s["min_ratio"],
                min_gain=s["min_gain"],
                fallback=s["fallback"],
                model=model,
            )
        return model, selection

    # report tables

    def write_report(self, report: PhaseReport) -> List[Path]:
        """report.json plus the flat summaries, transitions and per-cluster MDS tables."""
        written = [self._write_summaries(report), self._write_transitions(report)]
        for cluster, embedding in enumerate(report.embeddings):
            path = self.path(f"mds_{cluster}.csv")
            with atomic_write(path) as fh:
                pd.DataFrame({
                    "player": report.players,
                    "x": [p[0] for p in embedding.coordinates],
                    "y": [p[1] for p in embedding.coordinates],
                }).to_csv(fh, index=False)
            written.append(path)

        # the report goes last so its presence marks a complete run
        path = self.path(REPORT_FILE)
        with atomic_write(path) as fh:
            json.dump(report.model_dump(mode="json"), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
        logger.info(f"Wrote report for k={report.k} to {self.root}")
        return written

    def _write_summaries(self, report: PhaseReport) -> Path:
        names = [f"d_{i}_{j}" for i, j in report.pair_labels]
        rows = []
        for s in report.summaries:
            row = {
                "cluster": s.cluster_id,
                "size": s.size,
                "share": s.share,
                "offense_share": s.offense_share,
                "character": s.character.value if s.character else "",
                "n_segments": s.n_segments,
                "mean_segment_ms": s.mean_segment_ms,
                "dominant_switch": "" if s.dominant_switch is None else s.dominant_switch,
            }
            row.update(zip(names, s.mean_distances))
            row.update(zip([f"dev_{n}" for n in names], s.profile_deviation))
            rows.append(row)
        path = self.path(SUMMARIES_FILE)
        with atomic_write(path) as fh:
            pd.DataFrame(rows).to_csv(fh, index=False)
        return path

    def _write_transitions(self, report: PhaseReport) -> Path:
        counts = report.transitions.count_array
        probabilities = report.transitions.probability_array
        rows = [
            {"from": a, "to": b, "count": int(counts[a, b]), "probability": float(probabilities[a, b])}
            for a in range(report.k) for b in range(report.k)
        ]
        path = self.path(TRANSITIONS_FILE)
        with atomic_write(path) as fh:
            pd.DataFrame(rows, columns=["from", "to", "count", "probability"]).to_csv(fh, index=False)
        return path

    def read_report(self) -> PhaseReport:
        path = self.path(REPORT_FILE)
        try:
            return PhaseReport.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ArtifactError(f"artifact {path} does not exist; run the report stage first")
