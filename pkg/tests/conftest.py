"""Shared fixtures for lane_change_lstm tests."""

import io
from typing import List

import pytest

from lane_change_lstm.models import FrameRecord, VehicleTrack
from lane_change_lstm.synthgen import SynthConfig, generate_recording
from lane_change_lstm.trajectory import parse_tracks

HEADER = (
    "frame,id,x,y,xVel,yVel,xAcc,yAcc,"
    "PVId,FVId,LPId,LAId,LFId,RPId,RAId,RFId,laneId"
)

# Vehicle 48 around its 3 -> 2 lane change.
VEHICLE_48 = [
    (1137, 166.64, 12.11, -33.64, -1.17, 0.44, -0.21),
    (1138, 165.3, 12.06, -33.62, -1.18, 0.44, -0.19),
    (1139, 163.96, 12.01, -33.6, -1.19, 0.44, -0.17),
    (1140, 162.61, 11.96, -33.58, -1.2, 0.45, -0.15),
    (1141, 161.26, 11.91, -33.57, -1.21, 0.45, -0.13),
    (1142, 159.91, 11.86, -33.55, -1.22, 0.45, -0.11),
    (1143, 158.57, 11.81, -33.53, -1.22, 0.45, -0.08),
    (1144, 157.23, 11.76, -33.51, -1.23, 0.46, -0.06),
    (1145, 155.89, 11.71, -33.49, -1.23, 0.46, -0.04),
    (1146, 154.54, 11.65, -33.48, -1.23, 0.46, -0.02),
    (1147, 153.19, 11.6, -33.46, -1.23, 0.46, 0),
    (1148, 151.85, 11.55, -33.44, -1.23, 0.46, 0.02),
    (1149, 150.51, 11.5, -33.42, -1.23, 0.47, 0.04),
    (1150, 149.18, 11.45, -33.4, -1.22, 0.47, 0.06),
    (1151, 147.85, 11.4, -33.38, -1.22, 0.47, 0.08),
    (1152, 146.53, 11.35, -33.36, -1.21, 0.47, 0.1),
    (1153, 145.2, 11.3, -33.34, -1.21, 0.47, 0.12),
]

# (vehicle id, x offset from ego, lane) for the vehicles 48 references
NEIGHBORS = [(45, 40.0, 2), (46, -30.0, 2), (49, 35.0, 2)]


def _ego_row(values) -> str:
    frame, x, y, x_vel, y_vel, x_acc, y_acc = values
    if frame <= 1147:
        neighbors, lane = (46, 49, 0, 0, 0, 0, 0, 0), 3
    else:
        neighbors, lane = (0, 45, 46, 0, 49, 0, 0, 0), 2
    fields = [frame, 48, x, y, x_vel, y_vel, x_acc, y_acc, *neighbors, lane]
    return ",".join(str(v) for v in fields)


def _neighbor_row(vehicle_id: int, offset: float, lane: int, values) -> str:
    frame, x, _, x_vel, _, _, _ = values
    fields = [frame, vehicle_id, round(x + offset, 2), 8.0, x_vel, 0.0, 0.0, 0.0]
    fields += [0] * 8 + [lane]
    return ",".join(str(v) for v in fields)


def table_csv(with_neighbors: bool = True) -> str:
    lines = [HEADER] + [_ego_row(values) for values in VEHICLE_48]
    if with_neighbors:
        for vehicle_id, offset, lane in NEIGHBORS:
            lines += [_neighbor_row(vehicle_id, offset, lane, values) for values in VEHICLE_48]
    return "\n".join(lines) + "\n"


@pytest.fixture
def table_tracks() -> List[VehicleTrack]:
    """Vehicle 48 plus the neighbors it references."""
    return parse_tracks(io.StringIO(table_csv()))


@pytest.fixture
def ego_track(table_tracks) -> VehicleTrack:
    return next(t for t in table_tracks if t.vehicle_id == 48)


def make_track(lanes: List[int], vehicle_id: int = 1, first_frame: int = 1) -> VehicleTrack:
    """A straight-line track following the given lane sequence."""
    records = [
        FrameRecord(
            frame=first_frame + i,
            vehicle_id=vehicle_id,
            x=30.0 * i / 25.0,
            y=3.75 * (lane - 0.5),
            x_vel=30.0,
            y_vel=0.0,
            x_acc=0.0,
            y_acc=0.0,
            neighbor_ids=(0,) * 8,
            lane_id=lane,
        )
        for i, lane in enumerate(lanes)
    ]
    return VehicleTrack(vehicle_id, records)


@pytest.fixture
def small_synth_config() -> SynthConfig:
    return SynthConfig(vehicle_count=40, duration=300, seed=3)


@pytest.fixture
def small_recording(small_synth_config):
    """(tracks, ground-truth events) of a small synthetic recording."""
    return generate_recording(small_synth_config)
