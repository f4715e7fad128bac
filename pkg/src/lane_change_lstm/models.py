"""Data models for trajectory recordings, lane change events and windows."""

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

# Neighbor slot order of FrameRecord.neighbor_ids
NEIGHBOR_SLOT_NAMES = ("PV", "FV", "LP", "LA", "LF", "RP", "RA", "RF")

VehicleKey = Tuple[str, int]


@dataclass(frozen=True)
class FrameRecord:
    """One vehicle's kinematic state at one frame."""

    frame: int
    vehicle_id: int
    x: float
    y: float
    x_vel: float
    y_vel: float
    x_acc: float
    y_acc: float
    neighbor_ids: Tuple[int, int, int, int, int, int, int, int]
    lane_id: int


@dataclass
class VehicleTrack:
    """All records of one vehicle, ordered by frame."""

    vehicle_id: int
    records: List[FrameRecord]
    recording_id: str = "0"

    @property
    def key(self) -> VehicleKey:
        return (self.recording_id, self.vehicle_id)

    @property
    def first_frame(self) -> int:
        return self.records[0].frame

    @property
    def last_frame(self) -> int:
        return self.records[-1].frame

    def __len__(self) -> int:
        return len(self.records)

    def record_at(self, frame: int) -> Optional[FrameRecord]:
        """Return the record at a frame, or None when it was not recorded."""
        if not self.records:
            return None
        index = frame - self.records[0].frame
        if 0 <= index < len(self.records):
            record = self.records[index]
            if record.frame == frame:
                return record
        # Frames after a gap sit before their offset position
        index = bisect_left(self.records, frame, key=lambda r: r.frame)
        if index < len(self.records) and self.records[index].frame == frame:
            return self.records[index]
        return None


@dataclass(frozen=True)
class RecordingMeta:
    """Recording-level metadata."""

    frame_rate: float
    lane_count: int
    recording_id: str = "0"


@dataclass
class Recording:
    """A parsed recording: metadata plus its vehicle tracks."""

    meta: RecordingMeta
    tracks: List[VehicleTrack]


@dataclass(frozen=True)
class Violation:
    """A single validation finding."""

    vehicle_id: int
    kind: str
    frame: int
    detail: str


@dataclass
class ValidationReport:
    """Per-track violations found by validate_tracks."""

    recording_id: str
    track_count: int
    violations: List[Violation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class LaneChangeEvent:
    """A lane-ID transition; f_lc is the first frame in the new lane."""

    vehicle_id: int
    f_lc: int
    from_lane: int
    to_lane: int
    recording_id: str = "0"


@dataclass
class LabeledWindow:
    """n consecutive ego frames with a binary label (1 = LC, 0 = LK)."""

    vehicle_id: int
    frames: List[FrameRecord]
    label: int
    anchor_frame: int
    recording_id: str = "0"

    @property
    def key(self) -> VehicleKey:
        return (self.recording_id, self.vehicle_id)

    @property
    def sort_key(self) -> Tuple[str, int, int, int]:
        return (self.recording_id, self.vehicle_id, self.anchor_frame, self.label)
