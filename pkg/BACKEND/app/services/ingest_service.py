"""Raw sensor ingestion: parsing, clipping, roster selection and LOCF regularization."""

import io
import logging
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import (
    ConfigurationError,
    ParseError,
    RegularizationError,
    RosterError,
    TimelineMismatchError,
)
from ..models import (
    SAMPLE_COLUMNS,
    FrameSeries,
    MatchTimeline,
    ParseDiagnostics,
    RawSession,
    RecordFormat,
    SessionStats,
)

logger = logging.getLogger(__name__)

ROSTER_SIZE = 5
PARSE_CHUNK_ROWS = 100_000
MAX_REPORTED_LINES = 20


def empty_samples() -> pd.DataFrame:
    frame = pd.DataFrame({name: pd.Series(dtype="float64") for name in SAMPLE_COLUMNS})
    return frame.astype({"timestamp": "int64", "player_id": "int64"})


def _column_positions(fmt: RecordFormat, header: Optional[List[str]]) -> List[int]:
    positions = []
    for name in SAMPLE_COLUMNS:
        ref = fmt.columns[name]
        if isinstance(ref, int):
            positions.append(ref)
            continue
        if header is None:
            raise ConfigurationError(f"column '{ref}' is referenced by name but the input has no header")
        if ref not in header:
            raise ConfigurationError(f"column '{ref}' not found in header {header}")
        positions.append(header.index(ref))
    return positions


def _looks_like_header(row: pd.Series) -> bool:
    values = pd.to_numeric(row.dropna(), errors="coerce")
    return bool(values.isna().any())


def parse_records(source: Union[BinaryIO, str, Path], fmt: Optional[RecordFormat] = None) -> RawSession:
    """Parse a delimited sample stream into a time-ordered RawSession.

    Malformed lines are skipped and counted; more than ``fmt.reject_threshold``
    of them is a hard failure. Duplicate (timestamp, player) samples keep the
    last one read.
    """
    fmt = fmt or RecordFormat()
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            return parse_records(handle, fmt)

    diagnostics = ParseDiagnostics()
    bad_field_lines = 0

    def _bad_line(fields: List[str]) -> None:
        nonlocal bad_field_lines
        bad_field_lines += 1
        return None

    text = io.TextIOWrapper(source, encoding=fmt.encoding, newline="")
    try:
        reader = pd.read_csv(
            text,
            sep=fmt.delimiter,
            header=None,
            dtype=str,
            engine="python",
            chunksize=PARSE_CHUNK_ROWS,
            on_bad_lines=_bad_line,
            skip_blank_lines=True,
            keep_default_na=False,
        )
        chunks = list(_parse_chunks(reader, fmt, diagnostics))
    except pd.errors.EmptyDataError:
        chunks = []
    finally:
        text.detach()

    diagnostics.rejected += bad_field_lines
    if diagnostics.rejected > fmt.reject_threshold:
        logger.error(f"Rejected {diagnostics.rejected} lines, threshold is {fmt.reject_threshold}")
        raise ParseError(
            f"{diagnostics.rejected} malformed lines exceed the reject threshold "
            f"{fmt.reject_threshold} (first bad lines: {diagnostics.rejected_lines})"
        )
    if diagnostics.rejected:
        logger.warning(f"Skipped {diagnostics.rejected} malformed lines: {diagnostics.rejected_lines}")

    samples = pd.concat(chunks, ignore_index=True) if chunks else empty_samples()
    samples = _order_samples(samples, diagnostics)
    diagnostics.parsed = len(samples) + diagnostics.duplicates
    logger.info(
        f"Parsed {diagnostics.parsed} samples for {samples['player_id'].nunique()} players "
        f"({diagnostics.rejected} rejected, {diagnostics.out_of_order} out of order)"
    )
    return RawSession(samples=samples, diagnostics=diagnostics)


def _parse_chunks(reader: Iterable[pd.DataFrame], fmt: RecordFormat,
                  diagnostics: ParseDiagnostics) -> Iterator[pd.DataFrame]:
    positions: Optional[List[int]] = None
    line_offset = 1
    for chunk in reader:
        if positions is None:
            first = chunk.iloc[0]
            has_header = fmt.header if fmt.header is not None else _looks_like_header(first)
            header = [str(v).strip() for v in first.tolist()] if has_header else None
            positions = _column_positions(fmt, header)
            if has_header:
                chunk = chunk.iloc[1:]
            if max(positions) >= chunk.shape[1]:
                raise ConfigurationError(
                    f"format references column {max(positions)} but the input has {chunk.shape[1]} columns"
                )

        raw = chunk.iloc[:, positions].set_axis(SAMPLE_COLUMNS, axis=1)
        values = raw.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
        t = values["timestamp"]
        pid = values["player_id"]
        ok = values.notna().all(axis=1) & np.isfinite(values).all(axis=1)
        ok &= (t >= 0) & (t == np.floor(t)) & (pid == np.floor(pid))

        bad_rows = np.flatnonzero(~ok.to_numpy())
        if len(bad_rows):
            diagnostics.rejected += len(bad_rows)
            room = MAX_REPORTED_LINES - len(diagnostics.rejected_lines)
            if room > 0:
                # row index counts physical lines from 0, header included
                line_numbers = chunk.index.to_numpy()[bad_rows[:room]] + line_offset
                diagnostics.rejected_lines.extend(int(n) for n in line_numbers)

        good = values[ok]
        # coordinates are re-read from text so every float round-trips exactly
        coords = raw.loc[ok, ["x", "y", "z"]].apply(lambda col: col.str.strip().astype("float64"))
        parsed = pd.DataFrame({
            "timestamp": good["timestamp"].astype("int64"),
            "player_id": good["player_id"].astype("int64"),
            "x": coords["x"] * fmt.scale,
            "y": coords["y"] * fmt.scale,
            "z": coords["z"] * fmt.scale,
        })
        yield parsed


def _order_samples(samples: pd.DataFrame, diagnostics: ParseDiagnostics) -> pd.DataFrame:
    t = samples["timestamp"].to_numpy()
    if len(t) > 1:
        out_of_order = int(np.count_nonzero(t[1:] < t[:-1]))
        if out_of_order:
            diagnostics.out_of_order += out_of_order
            logger.warning(f"{out_of_order} samples arrived out of timestamp order, sorting")
            samples = samples.sort_values("timestamp", kind="mergesort")

    before = len(samples)
    samples = samples.drop_duplicates(subset=["timestamp", "player_id"], keep="last")
    diagnostics.duplicates += before - len(samples)
    return samples.reset_index(drop=True)


def clip_to_play(session: RawSession, timeline: MatchTimeline) -> RawSession:
    """Keep the samples that fall inside some in-play period."""
    if not timeline.periods:
        raise ConfigurationError("timeline has no periods", stage="ingest")

    inside = timeline.period_index(session.samples["timestamp"].to_numpy()) >= 0
    kept = session.samples[inside]
    if kept.empty:
        logger.error("No sample falls inside the match timeline")
        raise TimelineMismatchError(
            f"none of the {session.n_samples} samples lies inside the {len(timeline.periods)} timeline periods"
        )
    logger.info(f"Clipped session to play: kept {len(kept)} of {session.n_samples} samples")
    return session.with_samples(kept)


def rebase_to_first_sample(session: RawSession, timeline: MatchTimeline) -> Tuple[RawSession, MatchTimeline]:
    """Move time zero to the first sample; ``epoch_ms`` keeps the offset from the source clock.

    The timeline is shifted with the samples so period membership is unchanged.
    """
    if session.n_samples == 0:
        raise RegularizationError("cannot rebase an empty session")
    shift = int(session.samples["timestamp"].min())
    if shift == 0:
        return session, timeline
    samples = session.samples.copy()
    samples["timestamp"] -= shift
    logger.info(f"Rebased session time: t = 0 is {session.epoch_ms + shift} ms on the source clock")
    return session.with_samples(samples, epoch_ms=session.epoch_ms + shift), timeline.rebased(shift)


def select_roster(session: RawSession, active: Iterable[int]) -> RawSession:
    """Restrict the session to the five players on court."""
    active = frozenset(int(p) for p in active)
    if len(active) != ROSTER_SIZE:
        raise RosterError(f"the feature space needs exactly {ROSTER_SIZE} active players, got {sorted(active)}")
    missing = active - session.roster
    if missing:
        raise RosterError(f"active players {sorted(missing)} have no samples in the session")

    kept = session.samples[session.samples["player_id"].isin(active)]
    dropped = session.roster - active
    if dropped:
        logger.info(f"Dropped benched players {sorted(dropped)} ({session.n_samples - len(kept)} samples)")
    return session.with_samples(kept)


def _player_tracks(session: RawSession, players: List[int]):
    tracks = {}
    for player in players:
        rows = session.samples[session.samples["player_id"] == player]
        if rows.empty:
            raise RegularizationError(f"player {player} has no samples to regularize")
        tracks[player] = (
            rows["timestamp"].to_numpy(dtype=np.int64),
            rows[["x", "y"]].to_numpy(dtype=np.float64),
        )
    return tracks


def iter_regularize(session: RawSession, grid_step: int = 1, chunk_frames: int = 200_000,
                    start_ms: Optional[int] = None, end_ms: Optional[int] = None,
                    players: Optional[Iterable[int]] = None) -> Iterator[FrameSeries]:
    """Yield the LOCF grid in chunks of at most ``chunk_frames`` frames.

    Without an explicit ``start_ms`` the grid starts at the first instant every
    player has been observed.
    """
    if grid_step < 1:
        raise ConfigurationError(f"grid_step must be >= 1 ms, got {grid_step}", stage="ingest")
    if session.n_samples == 0:
        raise RegularizationError("cannot regularize an empty session")

    players = sorted(int(p) for p in (players if players is not None else session.roster))
    tracks = _player_tracks(session, players)

    if start_ms is None:
        start_ms = max(int(times[0]) for times, _ in tracks.values())
    else:
        for player, (times, _) in tracks.items():
            if times[0] > start_ms:
                raise RegularizationError(
                    f"player {player} has no sample at or before the first grid instant {start_ms} ms "
                    f"(first sample at {int(times[0])} ms)"
                )
    if end_ms is None:
        end_ms = int(session.samples["timestamp"].max())
    if end_ms < start_ms:
        raise RegularizationError(f"grid end {end_ms} ms precedes grid start {start_ms} ms")

    n_frames = (end_ms - start_ms) // grid_step + 1
    logger.debug(f"Regularizing {len(players)} players onto {n_frames} frames of {grid_step} ms")

    for first in range(0, n_frames, chunk_frames):
        count = min(chunk_frames, n_frames - first)
        grid = start_ms + (first + np.arange(count, dtype=np.int64)) * grid_step
        coords = np.empty((count, len(players), 2), dtype=np.float64)
        imputed = np.empty((count, len(players)), dtype=bool)
        for j, player in enumerate(players):
            times, xy = tracks[player]
            idx = np.searchsorted(times, grid, side="right") - 1
            coords[:, j, :] = xy[idx]
            imputed[:, j] = times[idx] != grid
        yield FrameSeries(
            grid_step=grid_step,
            start_ms=int(grid[0]),
            players=tuple(players),
            coords=coords,
            imputed_mask=imputed,
        )


def regularize(session: RawSession, grid_step: int = 1, start_ms: Optional[int] = None,
               end_ms: Optional[int] = None, players: Optional[Iterable[int]] = None) -> FrameSeries:
    """Last-observation-carried-forward onto a uniform ``grid_step`` grid."""
    chunks = list(iter_regularize(session, grid_step, chunk_frames=1_000_000,
                                  start_ms=start_ms, end_ms=end_ms, players=players))
    frames = FrameSeries.concat(chunks)
    logger.info(
        f"Regularized {frames.n_frames} frames from {frames.start_ms} to {frames.end_ms} ms, "
        f"{frames.imputed_mask.mean():.1%} imputed"
    )
    return frames


def regularize_periods(session: RawSession, timeline: MatchTimeline, grid_step: int = 1,
                       chunk_frames: int = 200_000) -> Iterator[Tuple[int, FrameSeries]]:
    """Stream (period index, chunk) pairs; each period gets its own grid so none spans a break."""
    players = sorted(session.roster)
    for i, period in enumerate(timeline.periods):
        part = session.with_samples(
            session.samples[timeline.period_index(session.samples["timestamp"].to_numpy()) == i]
        )
        if part.n_samples == 0:
            logger.warning(f"Period {i} [{period.start_ms}, {period.end_ms}) has no samples, skipping")
            continue
        missing = set(players) - part.roster
        if missing:
            raise RegularizationError(f"players {sorted(missing)} have no samples in period {i}")
        for chunk in iter_regularize(part, grid_step, chunk_frames=chunk_frames, players=players):
            yield i, chunk


def frames_as_session(frames: FrameSeries) -> RawSession:
    """View every grid cell as one exact sample (z = 0)."""
    n, p = frames.n_frames, len(frames.players)
    samples = pd.DataFrame({
        "timestamp": np.repeat(frames.timestamps, p),
        "player_id": np.tile(np.asarray(frames.players, dtype=np.int64), n),
        "x": frames.coords[:, :, 0].ravel(),
        "y": frames.coords[:, :, 1].ravel(),
        "z": np.zeros(n * p),
    })
    return RawSession(samples=samples, grid_step=frames.grid_step)


def session_stats(session: RawSession) -> SessionStats:
    """Sampling diagnostics: overall rate and per-player mean gap."""
    if session.n_samples < 2:
        raise ParseError(f"session statistics need at least 2 samples, got {session.n_samples}")

    t = session.samples["timestamp"].to_numpy(dtype=np.int64)
    span = int(t[-1] - t[0])
    per_player = {}
    for player, rows in session.samples.groupby("player_id", sort=True):
        gaps = np.diff(rows["timestamp"].to_numpy(dtype=np.int64))
        per_player[int(player)] = float(gaps.mean()) if len(gaps) else None

    return SessionStats(
        total_samples=session.n_samples,
        n_players=len(per_player),
        span_ms=span,
        overall_rate_hz=(len(t) - 1) / (span / 1000.0) if span > 0 else float("inf"),
        overall_mean_interval_ms=span / (len(t) - 1),
        mean_interval_ms=per_player,
    )
