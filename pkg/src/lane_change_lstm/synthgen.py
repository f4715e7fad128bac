"""Synthetic HighD-schema recordings with ground-truth lane changes.

Coordinates: vehicles travel in +x; lane k covers y in [(k-1)w, kw) so the
left neighbor lane of lane k is k + 1.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError
from .events import detect_lane_changes
from .models import FrameRecord, LaneChangeEvent, Recording, RecordingMeta, VehicleTrack
from .trajectory import TRACKS_SUFFIX, write_recording_meta, write_tracks

# Create logger for this module
logger = logging.getLogger(__name__)

EVENTS_SUFFIX = "_events.json"
SIGNAL_MODES = ("velocity", "acceleration", "both")


class SignalDefaults:
    """Per-mode defaults for fields left unset in SynthConfig."""

    MANEUVER_FRAMES = {"velocity": 40, "acceleration": 250, "both": 40}
    VELOCITY_NOISE = {"velocity": 0.05, "acceleration": 0.5, "both": 0.05}
    WEAVE_AMPLITUDE = {"velocity": 0.0, "acceleration": 1.5, "both": 0.0}


@dataclass
class SynthConfig:
    """Generator settings; unset mode-dependent fields are filled from SignalDefaults."""

    vehicle_count: int = 100
    lane_count: int = 3
    frame_rate: float = 25.0
    duration: int = 500
    lane_change_fraction: float = 0.5
    changes_per_vehicle: int = 1
    maneuver_frames: Optional[int] = None
    signal_mode: str = "velocity"
    velocity_noise: Optional[float] = None
    acceleration_noise: float = 0.05
    longitudinal_jitter: float = 0.05
    weave_amplitude: Optional[float] = None
    weave_period: int = 250
    signal_amplitude: float = 2.0
    signal_period: int = 10
    signal_lead: int = 25
    lane_width: float = 3.75
    vehicle_length: float = 5.0
    mean_gap: float = 30.0
    mean_speed: float = 30.0
    speed_std: float = 1.0
    seed: int = 0
    recording_id: str = "01"

    def __post_init__(self) -> None:
        if self.signal_mode not in SIGNAL_MODES:
            raise ConfigError(f"signal_mode must be one of {SIGNAL_MODES}, got {self.signal_mode!r}")
        if self.maneuver_frames is None:
            self.maneuver_frames = SignalDefaults.MANEUVER_FRAMES[self.signal_mode]
        if self.velocity_noise is None:
            self.velocity_noise = SignalDefaults.VELOCITY_NOISE[self.signal_mode]
        if self.weave_amplitude is None:
            self.weave_amplitude = SignalDefaults.WEAVE_AMPLITUDE[self.signal_mode]

        if self.lane_count < 2:
            raise ConfigError(f"lane_count must be >= 2, got {self.lane_count}")
        if self.vehicle_count < 1:
            raise ConfigError(f"vehicle_count must be >= 1, got {self.vehicle_count}")
        if not 0 <= self.lane_change_fraction <= 1:
            raise ConfigError(
                f"lane_change_fraction must be in [0, 1], got {self.lane_change_fraction}"
            )
        if self.changes_per_vehicle < 1:
            raise ConfigError("changes_per_vehicle must be >= 1")
        if self.maneuver_frames < 2:
            raise ConfigError("maneuver_frames must be >= 2")
        if not 0 <= self.weave_amplitude < self.lane_width / 2:
            raise ConfigError("weave_amplitude must be in [0, lane_width / 2)")
        if self.frame_rate <= 0 or self.lane_width <= 0 or self.vehicle_length <= 0:
            raise ConfigError("frame_rate, lane_width and vehicle_length must be positive")
        if min(self.velocity_noise, self.acceleration_noise, self.longitudinal_jitter) < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        if self.segment_length < self.maneuver_frames + 2 * self.crossing_margin:
            raise ConfigError(
                f"duration {self.duration} is too short for {self.changes_per_vehicle} "
                f"maneuver(s) of {self.maneuver_frames} frames"
            )

    @property
    def segment_length(self) -> int:
        return self.duration // self.changes_per_vehicle

    @property
    def crossing_margin(self) -> int:
        """Frames kept clear before and after a maneuver inside its segment."""
        return self.signal_lead + 10

    @property
    def has_acceleration_signal(self) -> bool:
        return self.signal_mode in ("acceleration", "both")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown synth keys: {', '.join(unknown)}")
        return cls(**data)


def lane_of(y: np.ndarray, lane_width: float, lane_count: int) -> np.ndarray:
    """Lane band containing each lateral position (1-based)."""
    return np.clip(np.floor(y / lane_width).astype(np.int64) + 1, 1, lane_count)


def lateral_ramp(u: np.ndarray) -> np.ndarray:
    """Normalized lateral offset of a raised-cosine velocity profile; 0 before, 1 after."""
    u = np.clip(u, 0.0, 1.0)
    return u - np.sin(2.0 * np.pi * u) / (2.0 * np.pi)


def _nearest(distance: np.ndarray, mask: np.ndarray, ids: np.ndarray) -> np.ndarray:
    masked = np.where(mask, distance, np.inf)
    index = np.argmin(masked, axis=1)
    found = np.isfinite(masked[np.arange(masked.shape[0]), index])
    return np.where(found, ids[index], 0)


def assign_neighbors(
    x: np.ndarray, lanes: np.ndarray, ids: np.ndarray, vehicle_length: float
) -> np.ndarray:
    """Neighbor IDs (N, 8) in PV, FV, LP, LA, LF, RP, RA, RF order for one frame.

    Nearest wins; ties go to the lowest ID (ids must be ascending). Vehicles
    in an adjacent lane within one vehicle length count as alongside.
    """
    dx = x[None, :] - x[:, None]  # dx[i, j] > 0: j is ahead of i
    not_self = ~np.eye(x.size, dtype=bool)
    same = (lanes[None, :] == lanes[:, None]) & not_self
    left = lanes[None, :] == lanes[:, None] + 1
    right = lanes[None, :] == lanes[:, None] - 1
    gap = np.abs(dx)

    columns = [
        _nearest(gap, same & (dx > 0), ids),
        _nearest(gap, same & (dx < 0), ids),
    ]
    for side in (left, right):
        columns.append(_nearest(gap, side & (dx >= vehicle_length), ids))
        columns.append(_nearest(gap, side & (gap < vehicle_length), ids))
        columns.append(_nearest(gap, side & (dx <= -vehicle_length), ids))
    return np.stack(columns, axis=1)


def _weave_envelope(
    frames: np.ndarray, quiet: List[Tuple[float, float]], taper: float
) -> np.ndarray:
    """1 away from maneuvers, 0 during them, cosine taper in between."""
    envelope = np.ones_like(frames, dtype=np.float64)
    for start, end in quiet:
        distance = np.maximum(np.maximum(start - frames, frames - end), 0.0)
        ramp = np.where(
            distance >= taper, 1.0, 0.5 * (1.0 - np.cos(np.pi * distance / max(taper, 1.0)))
        )
        envelope *= ramp
    return envelope


@dataclass
class _Maneuver:
    vehicle: int
    crossing: int  # 0-based index of the first frame in the new lane
    delta: float
    from_lane: int
    to_lane: int


def _plan_maneuvers(
    config: SynthConfig, start_lanes: np.ndarray, rng: np.random.Generator
) -> List[_Maneuver]:
    n_changers = int(round(config.lane_change_fraction * config.vehicle_count))
    changers = np.sort(rng.choice(config.vehicle_count, size=n_changers, replace=False))
    half = config.maneuver_frames // 2
    margin = config.crossing_margin + half
    maneuvers = []
    for vehicle in changers:
        lane = int(start_lanes[vehicle])
        for segment in range(config.changes_per_vehicle):
            offset = segment * config.segment_length
            crossing = offset + int(
                rng.integers(margin, config.segment_length - margin + 1)
            )
            if lane == 1:
                step = 1
            elif lane == config.lane_count:
                step = -1
            else:
                step = int(rng.choice((-1, 1)))
            maneuvers.append(
                _Maneuver(int(vehicle), crossing, step * config.lane_width, lane, lane + step)
            )
            lane += step
    return maneuvers


def _simulate(config: SynthConfig) -> Tuple[Dict[str, np.ndarray], List[_Maneuver]]:
    """Kinematic arrays of shape (N, T) and the planned maneuvers."""
    layout_seq, motion_seq, maneuver_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(4)
    N, T, fr = config.vehicle_count, config.duration, config.frame_rate
    w = config.lane_width

    layout = np.random.default_rng(layout_seq)
    start_lanes = layout.integers(1, config.lane_count + 1, size=N)
    x0 = np.empty(N)
    for lane in range(1, config.lane_count + 1):
        members = np.flatnonzero(start_lanes == lane)
        gaps = config.mean_gap * (0.5 + layout.random(members.size))
        x0[members] = np.cumsum(gaps)

    motion = np.random.default_rng(motion_seq)
    v0 = config.mean_speed + config.speed_std * motion.standard_normal(N)
    innovations = config.longitudinal_jitter * motion.standard_normal((N, T))
    ax = np.empty((N, T))
    ax[:, 0] = innovations[:, 0]
    for k in range(1, T):
        ax[:, k] = 0.95 * ax[:, k - 1] + innovations[:, k]
    weave_phase = motion.uniform(0.0, 2.0 * np.pi, size=N)

    maneuvers = _plan_maneuvers(config, start_lanes, np.random.default_rng(maneuver_seq))
    frames = np.arange(T, dtype=np.float64)
    y = np.repeat(((start_lanes - 0.5) * w)[:, None], T, axis=1)
    quiet: Dict[int, List[Tuple[float, float]]] = {}
    M = config.maneuver_frames
    for m in maneuvers:
        # lane boundary half a frame before the crossing, so both sides are strict
        ramp_start = m.crossing - 0.5 - M / 2.0
        y[m.vehicle] += m.delta * lateral_ramp((frames - ramp_start) / M)
        quiet.setdefault(m.vehicle, []).append((ramp_start, ramp_start + M))
        if config.has_acceleration_signal:
            lead = np.arange(max(m.crossing - config.signal_lead, 0), m.crossing)
            ax[m.vehicle, lead] += config.signal_amplitude * np.sin(
                2.0 * np.pi * (lead - lead[0]) / config.signal_period
            )

    if config.weave_amplitude > 0:
        taper = config.weave_period / 4.0
        for vehicle in range(N):
            envelope = _weave_envelope(frames, quiet.get(vehicle, []), taper)
            y[vehicle] += (
                config.weave_amplitude
                * envelope
                * np.sin(2.0 * np.pi * frames / config.weave_period + weave_phase[vehicle])
            )

    vx = v0[:, None] + np.cumsum(ax, axis=1) / fr
    x = x0[:, None] + np.cumsum(vx, axis=1) / fr
    vy = np.gradient(y, axis=1) * fr
    ay = np.gradient(vy, axis=1) * fr

    noise = np.random.default_rng(noise_seq)
    kinematics = {
        "x": x,
        "y": y,
        "x_vel": vx + config.velocity_noise * noise.standard_normal((N, T)),
        "y_vel": vy + config.velocity_noise * noise.standard_normal((N, T)),
        "x_acc": ax + config.acceleration_noise * noise.standard_normal((N, T)),
        "y_acc": ay + config.acceleration_noise * noise.standard_normal((N, T)),
        "lane": lane_of(y, w, config.lane_count),
    }
    return kinematics, maneuvers


def generate_recording(config: SynthConfig) -> Tuple[List[VehicleTrack], List[LaneChangeEvent]]:
    """Tracks for vehicles 1..N over frames 1..duration plus their lane changes."""
    state, planned = _simulate(config)
    N, T = config.vehicle_count, config.duration
    ids = np.arange(1, N + 1)

    neighbors = np.empty((T, N, 8), dtype=np.int64)
    for k in range(T):
        neighbors[k] = assign_neighbors(state["x"][:, k], state["lane"][:, k], ids, config.vehicle_length)

    columns = {name: state[name].tolist() for name in ("x", "y", "x_vel", "y_vel", "x_acc", "y_acc")}
    lanes = state["lane"].tolist()
    tracks = []
    for i in range(N):
        records = [
            FrameRecord(
                frame=k + 1,
                vehicle_id=i + 1,
                x=columns["x"][i][k],
                y=columns["y"][i][k],
                x_vel=columns["x_vel"][i][k],
                y_vel=columns["y_vel"][i][k],
                x_acc=columns["x_acc"][i][k],
                y_acc=columns["y_acc"][i][k],
                neighbor_ids=tuple(int(v) for v in neighbors[k, i]),
                lane_id=lanes[i][k],
            )
            for k in range(T)
        ]
        tracks.append(VehicleTrack(i + 1, records, config.recording_id))

    events = sorted(
        (
            LaneChangeEvent(
                vehicle_id=m.vehicle + 1,
                f_lc=m.crossing + 1,
                from_lane=m.from_lane,
                to_lane=m.to_lane,
                recording_id=config.recording_id,
            )
            for m in planned
        ),
        key=lambda e: (e.vehicle_id, e.f_lc),
    )
    detected = [event for track in tracks for event in detect_lane_changes(track)]
    if detected != events:
        logger.warning(
            f"Planned {len(events)} lane changes but detection found {len(detected)} "
            f"that do not all match"
        )
    logger.info(
        f"Generated recording {config.recording_id}: {N} vehicles x {T} frames, "
        f"{len(events)} lane changes ({config.signal_mode} signal)"
    )
    return tracks, events


def generate_recordings(
    config: SynthConfig, count: int = 1, jobs: int = 1
) -> List[Tuple[Recording, List[LaneChangeEvent]]]:
    """`count` recordings; recording i uses seed config.seed + i and id i + 1."""
    configs = [
        replace(config, seed=config.seed + i, recording_id=f"{i + 1:02d}")
        if count > 1
        else config
        for i in range(count)
    ]
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(generate_recording, configs))
    else:
        outputs = [generate_recording(c) for c in configs]
    return [
        (Recording(meta=recording_meta(c), tracks=tracks), events)
        for c, (tracks, events) in zip(configs, outputs)
    ]


def recording_meta(config: SynthConfig) -> RecordingMeta:
    return RecordingMeta(
        frame_rate=config.frame_rate,
        lane_count=config.lane_count,
        recording_id=config.recording_id,
    )


def write_recording(
    directory: Union[str, Path], recording: Recording, events: List[LaneChangeEvent]
) -> Path:
    """Write tracks CSV, meta JSON and the ground-truth events sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    recording_id = recording.meta.recording_id
    tracks_path = directory / f"{recording_id}{TRACKS_SUFFIX}"
    with open(tracks_path, "w", encoding="utf-8", newline="") as f:
        write_tracks(recording.tracks, f)
    write_recording_meta(directory, recording.meta)
    with open(directory / f"{recording_id}{EVENTS_SUFFIX}", "w", encoding="utf-8") as f:
        json.dump([asdict(e) for e in events], f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote recording {recording_id} to {directory}")
    return tracks_path


def read_events(path: Union[str, Path]) -> List[LaneChangeEvent]:
    with open(path, "r", encoding="utf-8") as f:
        return [LaneChangeEvent(**entry) for entry in json.load(f)]
