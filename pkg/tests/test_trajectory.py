"""Tests for trajectory parsing, serialization and validation."""

import io
import json

import pytest

from lane_change_lstm.errors import (
    DataSourceError,
    FrameGap,
    MalformedRow,
    MissingColumn,
    NonMonotonicFrames,
)
from lane_change_lstm.models import RecordingMeta, VehicleTrack
from lane_change_lstm.synthgen import recording_meta
from lane_change_lstm.trajectory import (
    ColumnAliases,
    TrackSet,
    find_recordings,
    load_recordings,
    parse_tracks,
    read_recording_meta,
    tracks_to_csv,
    validate_tracks,
    write_recording_meta,
)

from .conftest import HEADER, make_track, table_csv


def _row(frame, vehicle_id=1, lane=1, neighbors=(0,) * 8):
    values = [frame, vehicle_id, 1.0, 2.0, 30.0, 0.0, 0.0, 0.0, *neighbors, lane]
    return ",".join(str(v) for v in values)


def _csv(*rows):
    return io.StringIO("\n".join((HEADER,) + rows) + "\n")


class TestParseTracks:
    """Test cases for parse_tracks."""

    def test_table_row(self):
        """Test that the first published row of vehicle 48 parses exactly."""
        tracks = parse_tracks(io.StringIO(table_csv(with_neighbors=False)))

        assert len(tracks) == 1
        first = tracks[0].records[0]
        assert first.frame == 1137
        assert first.vehicle_id == 48
        assert first.x == 166.64
        assert first.y == 12.11
        assert first.x_vel == -33.64
        assert first.y_acc == -0.21
        assert first.lane_id == 3
        assert first.neighbor_ids == (46, 49, 0, 0, 0, 0, 0, 0)

    def test_tracks_ordered_by_vehicle(self, table_tracks):
        """Test that tracks come back ordered by vehicle_id with ascending frames."""
        assert [t.vehicle_id for t in table_tracks] == [45, 46, 48, 49]
        for track in table_tracks:
            frames = [r.frame for r in track.records]
            assert frames == sorted(frames)

    def test_header_only(self):
        """Test that a header without rows yields no tracks."""
        assert parse_tracks(io.StringIO(HEADER + "\n")) == []

    def test_highd_header_names(self):
        """Test that canonical HighD column names are accepted."""
        header = ",".join(ColumnAliases.canonical_header())
        source = io.StringIO(header + "\n" + _row(1) + "\n")

        tracks = parse_tracks(source)

        assert tracks[0].records[0].x_vel == 30.0

    def test_missing_column(self):
        """Test that a header without laneId is rejected."""
        header = HEADER.rsplit(",", 1)[0]
        with pytest.raises(MissingColumn) as exc_info:
            parse_tracks(io.StringIO(header + "\n"))
        assert exc_info.value.column == "laneId"

    @pytest.mark.parametrize(
        "row",
        [
            "1,1,abc,2.0,30.0,0.0,0.0,0.0,0,0,0,0,0,0,0,0,1",
            "1,1,1.0,2.0,30.0,0.0,0.0,0.0,0,0,0,0,0,0,0,0",
            "1,1,1.0,2.0,30.0,0.0,0.0,0.0,0,0,0,0,0,0,0,0,0",
            "1,1,1.0,2.0,30.0,0.0,0.0,0.0,1,0,0,0,0,0,0,0,1",
            "1,1,1.0,2.0,30.0,0.0,0.0,0.0,-3,0,0,0,0,0,0,0,1",
            "1,1,1.0,2.0,30.0,0.0,0.0,0.0,0,0,0,0,0,0,0,0,45,1",
        ],
        ids=["non-numeric", "short-row", "zero-lane", "self-neighbor", "negative-neighbor", "extra-value"],
    )
    def test_malformed_rows(self, row):
        """Test that broken rows report their line number."""
        with pytest.raises(MalformedRow) as exc_info:
            parse_tracks(_csv(_row(1, vehicle_id=2), row))
        assert exc_info.value.line == 3

    def test_every_row_wider_than_header(self):
        """Test rows carrying one more value than the header, as in the printed sample table."""
        with pytest.raises(MalformedRow, match="expected 17 fields, got 18") as exc_info:
            parse_tracks(_csv(_row(1) + ",45", _row(2) + ",45"))
        assert exc_info.value.line == 2

    def test_missing_trailing_value(self):
        """Test that a row one value short names its line and the count."""
        with pytest.raises(MalformedRow, match="expected 17 fields, got 16") as exc_info:
            parse_tracks(_csv(_row(1), _row(2).rsplit(",", 1)[0]))
        assert exc_info.value.line == 3

    def test_non_monotonic_frames(self):
        """Test that a repeated frame for one vehicle is rejected."""
        with pytest.raises(NonMonotonicFrames) as exc_info:
            parse_tracks(_csv(_row(1), _row(2), _row(2)))
        assert exc_info.value.vehicle_id == 1
        assert exc_info.value.frame == 2

    def test_gap_is_lenient_by_default(self):
        """Test that frame gaps parse unless strict."""
        tracks = parse_tracks(_csv(_row(1), _row(2), _row(4)))
        assert [r.frame for r in tracks[0].records] == [1, 2, 4]

    def test_gap_strict(self):
        """Test that strict parsing rejects frame gaps."""
        with pytest.raises(FrameGap) as exc_info:
            parse_tracks(_csv(_row(1), _row(2), _row(4)), strict=True)
        assert exc_info.value.missing_frame == 3

    def test_interleaved_rows(self):
        """Test that rows of different vehicles may interleave."""
        tracks = parse_tracks(_csv(_row(1, 2), _row(1, 1), _row(2, 2), _row(2, 1)))
        assert [t.vehicle_id for t in tracks] == [1, 2]
        assert [len(t) for t in tracks] == [2, 2]

    def test_round_trip_generated_tracks(self, small_recording):
        """Test that serialized synthetic tracks parse back identically."""
        tracks, _ = small_recording

        parsed = parse_tracks(io.StringIO(tracks_to_csv(tracks)), recording_id="01")

        assert parsed == tracks


class TestValidateTracks:
    """Test cases for validate_tracks."""

    def setup_method(self):
        """Set up test fixtures."""
        self.meta = RecordingMeta(frame_rate=25.0, lane_count=3, recording_id="01")

    def test_frame_gap(self):
        """Test that a track with frames 1, 2, 4 reports one gap at frame 3."""
        track = make_track([1, 1, 1])
        track.records.pop(2)
        track.records.append(make_track([1, 1, 1, 1]).records[3])

        report = validate_tracks([track], self.meta)

        assert [(v.kind, v.frame) for v in report.violations] == [("frame_gap", 3)]
        assert not report.is_valid

    def test_dangling_neighbor(self):
        """Test that a reference to a nonexistent vehicle is reported."""
        track = parse_tracks(_csv(_row(1, neighbors=(999, 0, 0, 0, 0, 0, 0, 0))))

        report = validate_tracks(track, self.meta)

        assert len(report.violations) == 1
        assert report.violations[0].kind == "dangling_neighbor"
        assert "999" in report.violations[0].detail

    def test_lane_out_of_range(self):
        """Test that lane IDs above lane_count are reported."""
        report = validate_tracks([make_track([1, 4])], self.meta)
        assert [v.kind for v in report.violations] == ["lane_out_of_range"]

    def test_table_tracks_valid(self, table_tracks):
        """Test that the vehicle 48 fixture is internally consistent."""
        assert validate_tracks(table_tracks, self.meta).is_valid

    def test_synthetic_recording_valid(self, small_recording, small_synth_config):
        """Test that a generated recording has no violations."""
        tracks, _ = small_recording
        report = validate_tracks(tracks, recording_meta(small_synth_config))
        assert report.violations == []


class TestTrackSet:
    """Test cases for TrackSet lookups."""

    def test_record_lookup(self, table_tracks):
        """Test lookup by recording, vehicle and frame."""
        track_set = TrackSet(table_tracks)

        record = track_set.record("0", 46, 1140)

        assert record is not None
        assert record.vehicle_id == 46
        assert record.frame == 1140
        assert track_set.record("0", 46, 2000) is None
        assert track_set.record("0", 7, 1140) is None
        assert ("0", 48) in track_set

    def test_gapped_track_lookup(self):
        """Test that lookup still finds frames after a gap."""
        records = make_track([1, 1, 1, 1]).records
        track = VehicleTrack(1, [records[0], records[1], records[3]])

        assert TrackSet([track]).record("0", 1, 4) is records[3]


class TestRecordingFiles:
    """Test cases for recording directory handling."""

    def test_empty_directory(self, tmp_path):
        """Test that a directory without recordings is an error."""
        with pytest.raises(DataSourceError, match="no recordings found"):
            load_recordings(tmp_path)

    def test_missing_directory(self, tmp_path):
        """Test that a nonexistent directory is an error."""
        with pytest.raises(DataSourceError):
            find_recordings(tmp_path / "absent")

    def test_load_recording(self, tmp_path):
        """Test loading a tracks CSV with its metadata."""
        (tmp_path / "07_tracks.csv").write_text(table_csv(), encoding="utf-8")
        write_recording_meta(tmp_path, RecordingMeta(25.0, 3, "07"))

        recordings = load_recordings(tmp_path)

        assert len(recordings) == 1
        assert recordings[0].meta.lane_count == 3
        assert all(t.recording_id == "07" for t in recordings[0].tracks)

    def test_meta_from_highd_csv(self, tmp_path):
        """Test that HighD recordingMeta files give lane_count from lane markings."""
        (tmp_path / "01_recordingMeta.csv").write_text(
            "id,frameRate,upperLaneMarkings,lowerLaneMarkings\n"
            "1,25,8.51;12.59;16.43,21.0;24.96;28.8\n",
            encoding="utf-8",
        )

        meta = read_recording_meta(tmp_path, "01")

        assert meta.frame_rate == 25.0
        assert meta.lane_count == 6

    def test_meta_missing_key(self, tmp_path):
        """Test that a meta JSON without lane_count is rejected."""
        (tmp_path / "01_meta.json").write_text(json.dumps({"frame_rate": 25}), encoding="utf-8")
        with pytest.raises(DataSourceError, match="lane_count"):
            read_recording_meta(tmp_path, "01")
