"""Lane change detection and labeled window assembly."""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataSourceError, EmptyClass
from .models import LabeledWindow, LaneChangeEvent, VehicleKey, VehicleTrack
from .trajectory import TrackSet, tracks_to_csv

# Create logger for this module
logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 25  # 1 s at 25 Hz
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class Rejection(Enum):
    """Reasons a lane change event yields no window."""

    INSUFFICIENT_HISTORY = "insufficient_history"
    OVERLAPPING_EVENT = "overlapping_event"


@dataclass
class WindowPolicy:
    """Window geometry shared by the positive and negative class."""

    n: int = 5
    stride: int = 1
    horizon: int = DEFAULT_HORIZON
    post_horizon: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"window length n must be >= 1, got {self.n}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        if self.post_horizon is None:
            self.post_horizon = self.horizon

    @property
    def span(self) -> int:
        """Frames covered from the first window frame to the anchor, inclusive."""
        return (self.n - 1) * self.stride + 1


@dataclass
class LaneKeepSample:
    """Result of sample_lk_windows."""

    windows: List[LabeledWindow]
    shortfall: bool
    pool_size: int


@dataclass
class DatasetSplit:
    """Balanced, vehicle-disjoint train/test windows."""

    train: List[LabeledWindow]
    test: List[LabeledWindow]
    policy: WindowPolicy
    seed: int
    split_fraction: float
    rejections: Dict[str, int] = field(default_factory=dict)

    def label_counts(self) -> Dict[str, Tuple[int, int]]:
        """(LK, LC) counts per split."""
        counts = {}
        for name, windows in (("train", self.train), ("test", self.test)):
            positives = sum(w.label for w in windows)
            counts[name] = (len(windows) - positives, positives)
        return counts


def detect_lane_changes(track: VehicleTrack) -> List[LaneChangeEvent]:
    """One event per consecutive-frame pair whose lane_id differs."""
    events = []
    records = track.records
    for previous, current in zip(records, records[1:]):
        if current.lane_id != previous.lane_id and current.frame == previous.frame + 1:
            events.append(
                LaneChangeEvent(
                    vehicle_id=track.vehicle_id,
                    f_lc=current.frame,
                    from_lane=previous.lane_id,
                    to_lane=current.lane_id,
                    recording_id=track.recording_id,
                )
            )
    return events


def extract_lc_window(
    track: VehicleTrack,
    event: LaneChangeEvent,
    n: int,
    stride: int = 1,
    events: Optional[Sequence[LaneChangeEvent]] = None,
) -> Union[LabeledWindow, Rejection]:
    """Return the n frames ending at f_lc - 1 with label 1, or a rejection."""
    if n < 1:
        raise ConfigError(f"window length n must be >= 1, got {n}")
    anchor = event.f_lc - stride
    start = event.f_lc - n * stride
    if start < track.first_frame:
        return Rejection.INSUFFICIENT_HISTORY

    if events is None:
        events = detect_lane_changes(track)
    # Any other transition in (start, f_lc) lands inside the window
    if any(start < other.f_lc < event.f_lc for other in events):
        return Rejection.OVERLAPPING_EVENT

    frames = [track.record_at(f) for f in range(start, anchor + 1, stride)]
    if any(record is None for record in frames):
        return Rejection.INSUFFICIENT_HISTORY
    return LabeledWindow(
        vehicle_id=track.vehicle_id,
        frames=frames,
        label=1,
        anchor_frame=anchor,
        recording_id=track.recording_id,
    )


def _valid_lk_anchors(track: VehicleTrack, policy: WindowPolicy) -> np.ndarray:
    """Anchor frames whose window and following horizon are recorded and free of lane changes."""
    length = len(track.records)
    first = track.first_frame
    if length < policy.span + policy.horizon:
        return np.empty(0, dtype=np.int64)

    anchors = np.arange(first + policy.span - 1, track.last_frame - policy.horizon + 1)
    # Every frame in [start, anchor + horizon] must be present
    present = np.zeros(track.last_frame - first + 1, dtype=np.int64)
    present[np.array([r.frame for r in track.records], dtype=np.int64) - first] = 1
    seen = np.concatenate(([0], np.cumsum(present)))
    low_index = anchors - (policy.span - 1) - first
    high_index = anchors + policy.horizon - first + 1
    anchors = anchors[seen[high_index] - seen[low_index] == high_index - low_index]

    change_frames = np.array(
        [e.f_lc for e in detect_lane_changes(track)], dtype=np.int64
    )
    if change_frames.size == 0 or anchors.size == 0:
        return anchors

    starts = anchors - (policy.span - 1)
    low = starts - policy.post_horizon  # no change in (start - post_horizon, anchor + horizon]
    high = anchors + policy.horizon
    count = np.searchsorted(change_frames, high, side="right") - np.searchsorted(
        change_frames, low, side="right"
    )
    return anchors[count == 0]


def _lk_window(track: VehicleTrack, anchor: int, policy: WindowPolicy) -> LabeledWindow:
    start = anchor - (policy.span - 1)
    frames = [track.record_at(f) for f in range(start, anchor + 1, policy.stride)]
    return LabeledWindow(
        vehicle_id=track.vehicle_id,
        frames=frames,
        label=0,
        anchor_frame=anchor,
        recording_id=track.recording_id,
    )


def sample_lk_windows(
    tracks: Sequence[VehicleTrack],
    n: int,
    count: int,
    seed: int,
    horizon: int = DEFAULT_HORIZON,
    stride: int = 1,
    post_horizon: Optional[int] = None,
) -> LaneKeepSample:
    """Draw up to `count` lane-keep windows uniformly over (vehicle, anchor) candidates."""
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    policy = WindowPolicy(n=n, stride=stride, horizon=horizon, post_horizon=post_horizon)

    ordered = sorted(tracks, key=lambda t: t.key)
    anchors_per_track = [_valid_lk_anchors(track, policy) for track in ordered]
    sizes = np.array([a.size for a in anchors_per_track], dtype=np.int64)
    pool_size = int(sizes.sum())

    if count == 0:
        return LaneKeepSample([], shortfall=False, pool_size=pool_size)

    take = min(count, pool_size)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool_size, size=take, replace=False)) if take else []
    offsets = np.cumsum(sizes)

    windows = []
    for flat_index in chosen:
        track_index = int(np.searchsorted(offsets, flat_index, side="right"))
        local = int(flat_index - (offsets[track_index] - sizes[track_index]))
        anchor = int(anchors_per_track[track_index][local])
        windows.append(_lk_window(ordered[track_index], anchor, policy))

    shortfall = take < count
    if shortfall:
        logger.warning(f"Lane-keep pool exhausted: {take} of {count} windows available")
    return LaneKeepSample(windows, shortfall=shortfall, pool_size=pool_size)


def extract_lc_windows(
    tracks: Sequence[VehicleTrack], policy: WindowPolicy
) -> Tuple[List[LabeledWindow], Counter]:
    """Extract every acceptable lane change window, counting rejections."""
    windows: List[LabeledWindow] = []
    rejections: Counter = Counter()
    for track in sorted(tracks, key=lambda t: t.key):
        events = detect_lane_changes(track)
        for event in events:
            result = extract_lc_window(track, event, policy.n, policy.stride, events)
            if isinstance(result, Rejection):
                rejections[result.value] += 1
            else:
                windows.append(result)
    return windows, rejections


def _split_by_vehicle(
    windows: Sequence[LabeledWindow], split_fraction: float, rng: np.random.Generator
) -> Tuple[List[LabeledWindow], List[LabeledWindow]]:
    """Greedy vehicle-level assignment that fills per-label test quotas."""
    by_vehicle: Dict[VehicleKey, List[LabeledWindow]] = defaultdict(list)
    for window in windows:
        by_vehicle[window.key].append(window)

    label_totals = Counter(w.label for w in windows)
    targets = {label: int(round((1 - split_fraction) * total)) for label, total in label_totals.items()}
    filled: Counter = Counter()

    vehicles = sorted(by_vehicle)
    permutation = rng.permutation(len(vehicles))
    test_vehicles = set()
    for index in permutation:
        vehicle = vehicles[index]
        contribution = Counter(w.label for w in by_vehicle[vehicle])
        if all(filled[label] + c <= targets[label] for label, c in contribution.items()):
            test_vehicles.add(vehicle)
            filled.update(contribution)

    train = [w for w in windows if w.key not in test_vehicles]
    test = [w for w in windows if w.key in test_vehicles]
    return sorted(train, key=lambda w: w.sort_key), sorted(test, key=lambda w: w.sort_key)


def build_dataset(
    tracks: Sequence[VehicleTrack],
    n: int,
    seed: int,
    split_fraction: float,
    horizon: int = DEFAULT_HORIZON,
    stride: int = 1,
    post_horizon: Optional[int] = None,
) -> DatasetSplit:
    """Class-balanced dataset with a vehicle-disjoint, label-stratified split."""
    if not 0 < split_fraction < 1:
        raise ConfigError(f"split_fraction must be in (0, 1), got {split_fraction}")
    policy = WindowPolicy(n=n, stride=stride, horizon=horizon, post_horizon=post_horizon)
    seeds = np.random.SeedSequence(seed).spawn(3)

    lc_windows, rejections = extract_lc_windows(tracks, policy)
    if not lc_windows:
        raise EmptyClass("No lane change windows could be extracted")

    lk_sample = sample_lk_windows(
        tracks,
        n,
        len(lc_windows),
        int(seeds[0].generate_state(1)[0]),
        horizon=policy.horizon,
        stride=policy.stride,
        post_horizon=policy.post_horizon,
    )
    lk_windows = lk_sample.windows
    if not lk_windows:
        raise EmptyClass("No lane-keep windows could be sampled")

    if len(lk_windows) < len(lc_windows):
        rng = np.random.default_rng(seeds[1])
        keep = np.sort(rng.choice(len(lc_windows), size=len(lk_windows), replace=False))
        lc_windows = [lc_windows[i] for i in keep]

    train, test = _split_by_vehicle(
        lc_windows + lk_windows, split_fraction, np.random.default_rng(seeds[2])
    )
    logger.info(
        f"Dataset n={n}: {len(lc_windows)} LC + {len(lk_windows)} LK windows, "
        f"{len(train)} train / {len(test)} test, rejections={dict(rejections)}"
    )
    return DatasetSplit(
        train=train,
        test=test,
        policy=policy,
        seed=seed,
        split_fraction=split_fraction,
        rejections=dict(rejections),
    )


# ---------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------


def export_dataset(
    split: DatasetSplit, directory: Union[str, Path], source: Optional[str] = None
) -> Path:
    """Write one CSV per window plus a JSON manifest."""
    directory = Path(directory)
    windows_dir = directory / "windows"
    windows_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for part, windows in (("train", split.train), ("test", split.test)):
        for index, window in enumerate(windows):
            file_name = f"{part}_{index:05d}.csv"
            track = VehicleTrack(window.vehicle_id, window.frames, window.recording_id)
            with open(windows_dir / file_name, "w", encoding="utf-8", newline="") as f:
                f.write(tracks_to_csv([track]))
            entries.append(
                {
                    "split": part,
                    "file": f"windows/{file_name}",
                    "recording_id": window.recording_id,
                    "vehicle_id": window.vehicle_id,
                    "anchor_frame": window.anchor_frame,
                    "label": window.label,
                }
            )

    manifest = {
        "version": MANIFEST_VERSION,
        "source": source,
        "n": split.policy.n,
        "stride": split.policy.stride,
        "horizon": split.policy.horizon,
        "post_horizon": split.policy.post_horizon,
        "seed": split.seed,
        "split_fraction": split.split_fraction,
        "rejections": split.rejections,
        "windows": entries,
    }
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Exported {len(entries)} windows to {directory}")
    return path


def load_dataset_manifest(directory: Union[str, Path]) -> Dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise DataSourceError(f"No dataset manifest at {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def materialize_dataset(manifest: Dict, tracks: Sequence[VehicleTrack]) -> DatasetSplit:
    """Rebuild a DatasetSplit from a manifest and the recordings it was cut from."""
    policy = WindowPolicy(
        n=manifest["n"],
        stride=manifest["stride"],
        horizon=manifest["horizon"],
        post_horizon=manifest["post_horizon"],
    )
    track_set = TrackSet(tracks)
    parts: Dict[str, List[LabeledWindow]] = {"train": [], "test": []}
    for entry in manifest["windows"]:
        track = track_set.track(entry["recording_id"], entry["vehicle_id"])
        if track is None:
            raise DataSourceError(
                f"Manifest references vehicle {entry['vehicle_id']} of recording "
                f"{entry['recording_id']}, which is not in the recordings"
            )
        anchor = entry["anchor_frame"]
        start = anchor - (policy.span - 1)
        frames = [track.record_at(f) for f in range(start, anchor + 1, policy.stride)]
        if any(record is None for record in frames):
            raise DataSourceError(
                f"Window ending at frame {anchor} of vehicle {entry['vehicle_id']} "
                "is outside the recorded track"
            )
        parts[entry["split"]].append(
            LabeledWindow(
                vehicle_id=track.vehicle_id,
                frames=frames,
                label=int(entry["label"]),
                anchor_frame=anchor,
                recording_id=track.recording_id,
            )
        )
    return DatasetSplit(
        train=parts["train"],
        test=parts["test"],
        policy=policy,
        seed=manifest["seed"],
        split_fraction=manifest["split_fraction"],
        rejections=manifest.get("rejections", {}),
    )
