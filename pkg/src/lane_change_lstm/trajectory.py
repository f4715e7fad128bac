"""HighD-format trajectory parsing, serialization and validation."""

import io
import re
import json
import time
import logging
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    DataSourceError,
    FrameGap,
    MalformedRow,
    MissingColumn,
    NonMonotonicFrames,
)
from .models import (
    FrameRecord,
    Recording,
    RecordingMeta,
    ValidationReport,
    VehicleKey,
    VehicleTrack,
    Violation,
)

# Create logger for this module
logger = logging.getLogger(__name__)

TRACKS_SUFFIX = "_tracks.csv"


class ColumnAliases:
    """Accepted header names per record field; the first name is the HighD canonical one."""

    ALIASES: Dict[str, Tuple[str, ...]] = {
        "frame": ("frame",),
        "vehicle_id": ("id", "vehicle_id", "vehicleId"),
        "x": ("x",),
        "y": ("y",),
        "x_vel": ("xVelocity", "xVel", "x_vel"),
        "y_vel": ("yVelocity", "yVel", "y_vel"),
        "x_acc": ("xAcceleration", "xAcc", "x_acc"),
        "y_acc": ("yAcceleration", "yAcc", "y_acc"),
        "PV": ("precedingId", "PVId"),
        "FV": ("followingId", "FVId"),
        "LP": ("leftPrecedingId", "LPId"),
        "LA": ("leftAlongsideId", "LAId"),
        "LF": ("leftFollowingId", "LFId"),
        "RP": ("rightPrecedingId", "RPId"),
        "RA": ("rightAlongsideId", "RAId"),
        "RF": ("rightFollowingId", "RFId"),
        "lane_id": ("laneId", "lane_id"),
    }
    NEIGHBOR_FIELDS = ("PV", "FV", "LP", "LA", "LF", "RP", "RA", "RF")
    KINEMATIC_FIELDS = ("x", "y", "x_vel", "y_vel", "x_acc", "y_acc")
    INTEGER_FIELDS = ("frame", "vehicle_id", "lane_id") + NEIGHBOR_FIELDS

    @classmethod
    def canonical_header(cls) -> List[str]:
        return [names[0] for names in cls.ALIASES.values()]


class TrackCsvParser:
    """Parses a tracks CSV stream into per-vehicle tracks."""

    _PARSER_LINE_PATTERN = re.compile(r"line (\d+)")

    def __init__(self, strict: bool = False, recording_id: str = "0") -> None:
        """Initialize the parser; strict parsing rejects frame gaps."""
        self.strict = strict
        self.recording_id = recording_id

    def parse(self, source: Union[TextIO, str, Path]) -> List[VehicleTrack]:
        """Parse a character stream (or path) into tracks ordered by vehicle_id."""
        frame = self._read_frame(source)
        if frame.empty:
            logger.debug("Tracks input has a header but no data rows")
            return []

        columns = self._resolve_columns(frame.columns)
        lines = frame.index.to_numpy() + 2  # header is line 1

        ints: Dict[str, np.ndarray] = {}
        floats: Dict[str, np.ndarray] = {}
        for field_name, column in columns.items():
            if field_name in ColumnAliases.INTEGER_FIELDS:
                ints[field_name] = self._integer_column(frame[column], column, lines)
            else:
                floats[field_name] = self._float_column(frame[column], column, lines)

        self._check_record_invariants(ints, lines)
        order = self._check_frame_order(ints["vehicle_id"], ints["frame"], lines)
        return self._build_tracks(ints, floats, order)

    def _read_frame(self, source: Union[TextIO, str, Path]) -> pd.DataFrame:
        """Read every cell as text so numeric errors can be located."""
        if isinstance(source, (str, Path)):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source.read()
        self._check_field_counts(text)
        try:
            frame = pd.read_csv(
                io.StringIO(text),
                index_col=False,
                dtype=str,
                keep_default_na=False,
                skipinitialspace=True,
                skip_blank_lines=False,
            )
        except pd.errors.EmptyDataError:
            raise MalformedRow(1, "missing header row")
        except pd.errors.ParserError as e:
            match = self._PARSER_LINE_PATTERN.search(str(e))
            line = int(match.group(1)) if match else 0
            raise MalformedRow(line, f"wrong column count ({e})")

        frame.columns = [str(c).strip() for c in frame.columns]
        # Blank lines arrive as all-missing rows; index still maps to the file line
        blank = frame.apply(lambda col: col.isna() | (col == "")).all(axis=1)
        return frame.loc[~blank]

    def _check_field_counts(self, text: str) -> None:
        """Every non-blank data row must have exactly as many fields as the header."""
        lines = text.splitlines()
        if not lines or not lines[0].strip():
            raise MalformedRow(1, "missing header row")
        width = lines[0].count(",") + 1
        for number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.count(",") + 1
            if fields != width:
                raise MalformedRow(
                    number, f"wrong column count: expected {width} fields, got {fields}"
                )

    def _resolve_columns(self, header: Iterable[str]) -> Dict[str, str]:
        """Map each record field to the header column that carries it."""
        available = set(header)
        resolved = {}
        for field_name, names in ColumnAliases.ALIASES.items():
            match = next((name for name in names if name in available), None)
            if match is None:
                raise MissingColumn(names[0])
            resolved[field_name] = match
        return resolved

    def _numeric(self, values: pd.Series, column: str, lines: np.ndarray) -> pd.Series:
        numeric = pd.to_numeric(values, errors="coerce")
        bad = numeric.isna().to_numpy()
        if bad.any():
            index = int(np.argmax(bad))
            raw = values.iloc[index]
            if raw is None or (isinstance(raw, float) and np.isnan(raw)) or raw == "":
                reason = f"missing value for '{column}' (wrong column count?)"
            else:
                reason = f"non-numeric value {raw!r} for '{column}'"
            raise MalformedRow(int(lines[index]), reason)
        return numeric

    def _integer_column(
        self, values: pd.Series, column: str, lines: np.ndarray
    ) -> np.ndarray:
        numeric = self._numeric(values, column, lines).to_numpy(dtype=np.float64)
        bad = ~np.isfinite(numeric) | (numeric != np.floor(numeric))
        if bad.any():
            index = int(np.argmax(bad))
            raise MalformedRow(
                int(lines[index]), f"'{column}' must be an integer, got {values.iloc[index]!r}"
            )
        return numeric.astype(np.int64)

    def _float_column(
        self, values: pd.Series, column: str, lines: np.ndarray
    ) -> np.ndarray:
        self._numeric(values, column, lines)
        # float() on the original text keeps shortest-repr values exact
        parsed = values.astype(np.float64).to_numpy()
        bad = ~np.isfinite(parsed)
        if bad.any():
            index = int(np.argmax(bad))
            raise MalformedRow(int(lines[index]), f"non-finite value for '{column}'")
        return parsed

    def _check_record_invariants(
        self, ints: Dict[str, np.ndarray], lines: np.ndarray
    ) -> None:
        vehicle_ids = ints["vehicle_id"]
        checks = [
            (vehicle_ids <= 0, "vehicle_id must be positive"),
            (ints["lane_id"] <= 0, "lane_id must be positive"),
        ]
        for slot in ColumnAliases.NEIGHBOR_FIELDS:
            neighbor = ints[slot]
            checks.append((neighbor < 0, f"{slot} neighbor ID must be >= 0"))
            checks.append((neighbor == vehicle_ids, f"{slot} neighbor ID equals own ID"))
        for bad, reason in checks:
            if bad.any():
                raise MalformedRow(int(lines[int(np.argmax(bad))]), reason)

    def _check_frame_order(
        self, vehicle_ids: np.ndarray, frames: np.ndarray, lines: np.ndarray
    ) -> np.ndarray:
        """Return the stable (vehicle, file-order) row order after checking frames."""
        order = np.argsort(vehicle_ids, kind="stable")
        ids_sorted = vehicle_ids[order]
        frames_sorted = frames[order]
        same_vehicle = ids_sorted[1:] == ids_sorted[:-1]
        step = frames_sorted[1:] - frames_sorted[:-1]

        bad = same_vehicle & (step <= 0)
        if bad.any():
            rows = order[1:][bad]
            row = int(rows.min())
            raise NonMonotonicFrames(int(vehicle_ids[row]), int(frames[row]), int(lines[row]))

        gaps = same_vehicle & (step > 1)
        if gaps.any():
            position = int(np.argmax(gaps))
            vehicle_id = int(ids_sorted[position])
            missing = int(frames_sorted[position]) + 1
            if self.strict:
                raise FrameGap(vehicle_id, missing)
            logger.warning(f"Vehicle {vehicle_id} has a frame gap starting at {missing}")
        return order

    def _build_tracks(
        self,
        ints: Dict[str, np.ndarray],
        floats: Dict[str, np.ndarray],
        order: np.ndarray,
    ) -> List[VehicleTrack]:
        columns = {name: values[order].tolist() for name, values in {**ints, **floats}.items()}
        neighbor_rows = zip(*(columns[slot] for slot in ColumnAliases.NEIGHBOR_FIELDS))

        tracks: List[VehicleTrack] = []
        current: Optional[VehicleTrack] = None
        for (
            frame_index,
            vehicle_id,
            x,
            y,
            x_vel,
            y_vel,
            x_acc,
            y_acc,
            lane_id,
            neighbors,
        ) in zip(
            columns["frame"],
            columns["vehicle_id"],
            columns["x"],
            columns["y"],
            columns["x_vel"],
            columns["y_vel"],
            columns["x_acc"],
            columns["y_acc"],
            columns["lane_id"],
            neighbor_rows,
        ):
            if current is None or current.vehicle_id != vehicle_id:
                current = VehicleTrack(vehicle_id, [], self.recording_id)
                tracks.append(current)
            current.records.append(
                FrameRecord(
                    frame=frame_index,
                    vehicle_id=vehicle_id,
                    x=x,
                    y=y,
                    x_vel=x_vel,
                    y_vel=y_vel,
                    x_acc=x_acc,
                    y_acc=y_acc,
                    neighbor_ids=tuple(neighbors),
                    lane_id=lane_id,
                )
            )
        return tracks


def parse_tracks(
    source: Union[TextIO, str, Path], strict: bool = False, recording_id: str = "0"
) -> List[VehicleTrack]:
    """Parse a tracks CSV into one VehicleTrack per vehicle."""
    return TrackCsvParser(strict=strict, recording_id=recording_id).parse(source)


def write_tracks(tracks: Sequence[VehicleTrack], stream: TextIO) -> None:
    """Serialize tracks with HighD column names; parse_tracks reads them back exactly."""
    header = ColumnAliases.canonical_header()
    rows = [
        (
            r.frame,
            r.vehicle_id,
            r.x,
            r.y,
            r.x_vel,
            r.y_vel,
            r.x_acc,
            r.y_acc,
            *r.neighbor_ids,
            r.lane_id,
        )
        for track in tracks
        for r in track.records
    ]
    frame = pd.DataFrame(rows, columns=header)
    frame.to_csv(stream, index=False, lineterminator="\n")


def tracks_to_csv(tracks: Sequence[VehicleTrack]) -> str:
    buffer = io.StringIO()
    write_tracks(tracks, buffer)
    return buffer.getvalue()


def validate_tracks(tracks: Sequence[VehicleTrack], meta: RecordingMeta) -> ValidationReport:
    """Report frame gaps, out-of-range lanes and dangling neighbor references."""
    report = ValidationReport(recording_id=meta.recording_id, track_count=len(tracks))
    by_id = {track.vehicle_id: track for track in tracks}

    for track in tracks:
        previous: Optional[FrameRecord] = None
        for record in track.records:
            if previous is not None and record.frame > previous.frame + 1:
                report.violations.append(
                    Violation(
                        track.vehicle_id,
                        "frame_gap",
                        previous.frame + 1,
                        f"frames {previous.frame + 1}..{record.frame - 1} missing",
                    )
                )
            previous = record

            if record.lane_id > meta.lane_count:
                report.violations.append(
                    Violation(
                        track.vehicle_id,
                        "lane_out_of_range",
                        record.frame,
                        f"lane_id {record.lane_id} exceeds lane_count {meta.lane_count}",
                    )
                )

            for slot, neighbor_id in zip(ColumnAliases.NEIGHBOR_FIELDS, record.neighbor_ids):
                if neighbor_id == 0:
                    continue
                neighbor = by_id.get(neighbor_id)
                if neighbor is None:
                    report.violations.append(
                        Violation(
                            track.vehicle_id,
                            "dangling_neighbor",
                            record.frame,
                            f"{slot} references nonexistent vehicle {neighbor_id}",
                        )
                    )
                elif _find_record(neighbor, record.frame) is None:
                    report.violations.append(
                        Violation(
                            track.vehicle_id,
                            "neighbor_absent_at_frame",
                            record.frame,
                            f"{slot} vehicle {neighbor_id} has no record at this frame",
                        )
                    )

    logger.debug(
        f"Validated {len(tracks)} tracks of recording {meta.recording_id}: "
        f"{len(report.violations)} violations"
    )
    return report


def _find_record(track: VehicleTrack, frame: int) -> Optional[FrameRecord]:
    record = track.record_at(frame)
    if record is not None:
        return record
    # Tracks with gaps fall back to a scan
    return next((r for r in track.records if r.frame == frame), None)


class TrackSet:
    """Frame-indexed lookup over tracks, keyed by (recording_id, vehicle_id)."""

    def __init__(self, tracks: Iterable[VehicleTrack]) -> None:
        self._tracks: Dict[VehicleKey, VehicleTrack] = {t.key: t for t in tracks}

    def __len__(self) -> int:
        return len(self._tracks)

    def __contains__(self, key: VehicleKey) -> bool:
        return key in self._tracks

    def track(self, recording_id: str, vehicle_id: int) -> Optional[VehicleTrack]:
        return self._tracks.get((recording_id, vehicle_id))

    def record(self, recording_id: str, vehicle_id: int, frame: int) -> Optional[FrameRecord]:
        track = self._tracks.get((recording_id, vehicle_id))
        if track is None:
            return None
        return _find_record(track, frame)


# ---------------------------------------------------------------------
# Recording files
# ---------------------------------------------------------------------


def read_recording_meta(directory: Path, recording_id: str) -> RecordingMeta:
    """Read `<id>_meta.json`, falling back to a HighD `<id>_recordingMeta.csv`."""
    json_path = directory / f"{recording_id}_meta.json"
    if json_path.is_file():
        with open(json_path, "r", encoding="utf-8") as f:
            data = json.load(f)
        try:
            meta = RecordingMeta(
                frame_rate=float(data["frame_rate"]),
                lane_count=int(data["lane_count"]),
                recording_id=str(data.get("recording_id", recording_id)),
            )
        except KeyError as e:
            raise DataSourceError(f"{json_path} lacks key {e}")
    else:
        csv_path = directory / f"{recording_id}_recordingMeta.csv"
        if not csv_path.is_file():
            raise DataSourceError(f"No metadata file for recording {recording_id} in {directory}")
        row = pd.read_csv(csv_path).iloc[0]
        lane_count = sum(
            len([v for v in str(row[column]).split(";") if v.strip()])
            for column in ("upperLaneMarkings", "lowerLaneMarkings")
            if column in row.index
        )
        meta = RecordingMeta(
            frame_rate=float(row["frameRate"]),
            lane_count=lane_count,
            recording_id=recording_id,
        )
    if meta.frame_rate <= 0 or meta.lane_count <= 0:
        raise DataSourceError(
            f"Recording {recording_id}: frame_rate and lane_count must be positive"
        )
    return meta


def write_recording_meta(directory: Path, meta: RecordingMeta) -> Path:
    path = directory / f"{meta.recording_id}_meta.json"
    payload = {
        "frame_rate": meta.frame_rate,
        "lane_count": meta.lane_count,
        "recording_id": meta.recording_id,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_recording(tracks_path: Union[str, Path], strict: bool = False) -> Recording:
    """Load one `<id>_tracks.csv` plus its metadata."""
    tracks_path = Path(tracks_path)
    recording_id = tracks_path.name[: -len(TRACKS_SUFFIX)]
    start_time = time.time()
    meta = read_recording_meta(tracks_path.parent, recording_id)
    with open(tracks_path, "r", encoding="utf-8", newline="") as f:
        tracks = parse_tracks(f, strict=strict, recording_id=recording_id)
    logger.info(
        f"Loaded recording {recording_id}: {len(tracks)} vehicles "
        f"in {time.time() - start_time:.2f}s"
    )
    return Recording(meta=meta, tracks=tracks)


def find_recordings(directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataSourceError(f"Recording directory does not exist: {directory}")
    return sorted(directory.glob(f"*{TRACKS_SUFFIX}"))


def load_recordings(
    directory: Union[str, Path], strict: bool = False, jobs: int = 1
) -> List[Recording]:
    """Load every recording in a directory, ordered by recording id."""
    paths = find_recordings(directory)
    if not paths:
        raise DataSourceError(f"no recordings found in {directory}")

    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            recordings = list(pool.map(load_recording, paths, [strict] * len(paths)))
    else:
        recordings = [load_recording(path, strict) for path in paths]
    return sorted(recordings, key=lambda r: r.meta.recording_id)


def all_tracks(recordings: Iterable[Recording]) -> List[VehicleTrack]:
    """Flatten recordings into one track list ordered by recording then vehicle."""
    return [track for recording in recordings for track in recording.tracks]
