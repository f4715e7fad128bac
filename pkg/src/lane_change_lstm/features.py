"""ACC/CACC relative feature encoding.

Each timestep carries, per configured neighbor slot, the Manhattan distances
between ego and neighbor position, velocity and acceleration (dp, dv, da).
Absent neighbors are imputed as (max_range, 0, 0).
"""

import json
import hashlib
import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DanglingNeighbor
from .models import NEIGHBOR_SLOT_NAMES, FrameRecord, LabeledWindow, VehicleKey
from .trajectory import TrackSet

# Create logger for this module
logger = logging.getLogger(__name__)

FEATURE_ORDER_VERSION = 1
DEFAULT_MAX_RANGE = 150.0


class NeighborSlot(Enum):
    """Surrounding-vehicle slots in canonical order."""

    PV = 0
    FV = 1
    LP = 2
    LA = 3
    LF = 4
    RP = 5
    RA = 6
    RF = 7

    @classmethod
    def parse(cls, name: Union[str, "NeighborSlot"]) -> "NeighborSlot":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigError(f"Unknown neighbor slot {name!r}; expected one of {NEIGHBOR_SLOT_NAMES}")


class Channel(Enum):
    """Relative-state channels in canonical order."""

    DP = "dp"
    DV = "dv"
    DA = "da"

    @classmethod
    def parse(cls, name: Union[str, "Channel"]) -> "Channel":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigError(f"Unknown channel {name!r}; expected dp, dv or da")


_CHANNEL_INDEX = {Channel.DP: 0, Channel.DV: 1, Channel.DA: 2}
_CHANNEL_ORDER = (Channel.DP, Channel.DV, Channel.DA)

Absent = None


@dataclass(frozen=True)
class FeatureConfig:
    """Which slots and channels are encoded, and over how many frames."""

    slots: Tuple[NeighborSlot, ...]
    channels: Tuple[Channel, ...]
    n: int = 5
    max_range: float = DEFAULT_MAX_RANGE
    normalize: bool = True

    def __post_init__(self) -> None:
        slots = tuple(sorted({NeighborSlot.parse(s) for s in self.slots}, key=lambda s: s.value))
        requested = {Channel.parse(c) for c in self.channels}
        channels = tuple(c for c in _CHANNEL_ORDER if c in requested)
        if not slots:
            raise ConfigError("FeatureConfig needs at least one slot")
        if not channels:
            raise ConfigError("FeatureConfig needs at least one channel")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not self.max_range > 0:
            raise ConfigError(f"max_range must be > 0, got {self.max_range}")
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "channels", channels)

    @property
    def width(self) -> int:
        return len(self.slots) * len(self.channels)

    @property
    def total_size(self) -> int:
        return self.n * self.width

    def feature_names(self) -> List[str]:
        return [f"{s.name}.{c.value}" for s in self.slots for c in self.channels]

    def with_changes(self, **changes: Any) -> "FeatureConfig":
        values = {
            "slots": self.slots,
            "channels": self.channels,
            "n": self.n,
            "max_range": self.max_range,
            "normalize": self.normalize,
        }
        values.update(changes)
        return FeatureConfig(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slots": [s.name for s in self.slots],
            "channels": [c.value for c in self.channels],
            "n": self.n,
            "max_range": self.max_range,
            "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureConfig":
        unknown = sorted(set(data) - {"preset", *(f.name for f in fields(cls))})
        if unknown:
            raise ConfigError(f"Unknown feature keys: {', '.join(unknown)}")
        if "preset" in data:
            base = preset_config(data["preset"], n=int(data.get("n", 5)))
            overrides = {k: v for k, v in data.items() if k not in ("preset",)}
            return base.with_changes(**overrides)
        try:
            return cls(
                slots=tuple(data["slots"]),
                channels=tuple(data["channels"]),
                n=int(data.get("n", 5)),
                max_range=float(data.get("max_range", DEFAULT_MAX_RANGE)),
                normalize=bool(data.get("normalize", True)),
            )
        except KeyError as e:
            raise ConfigError(f"Feature config lacks key {e}")


def acc_config(n: int = 5) -> FeatureConfig:
    """Three lead vehicles, position and velocity."""
    return FeatureConfig(
        slots=(NeighborSlot.LP, NeighborSlot.PV, NeighborSlot.RP),
        channels=(Channel.DP, Channel.DV),
        n=n,
    )


def cacc_config(n: int = 5) -> FeatureConfig:
    """All eight surrounding vehicles, position, velocity and acceleration."""
    return FeatureConfig(slots=tuple(NeighborSlot), channels=_CHANNEL_ORDER, n=n)


def following_config(n: int = 5) -> FeatureConfig:
    return FeatureConfig(
        slots=(NeighborSlot.LF, NeighborSlot.FV, NeighborSlot.RF),
        channels=_CHANNEL_ORDER,
        n=n,
    )


def preceding_alongside_config(n: int = 5) -> FeatureConfig:
    return FeatureConfig(
        slots=(
            NeighborSlot.LP,
            NeighborSlot.PV,
            NeighborSlot.RP,
            NeighborSlot.LA,
            NeighborSlot.RA,
        ),
        channels=_CHANNEL_ORDER,
        n=n,
    )


PRESETS = {
    "acc": acc_config,
    "cacc": cacc_config,
    "following": following_config,
    "preceding_alongside": preceding_alongside_config,
}


def preset_config(name: str, n: int = 5) -> FeatureConfig:
    try:
        return PRESETS[name](n)
    except KeyError:
        raise ConfigError(f"Unknown feature preset {name!r}; expected one of {sorted(PRESETS)}")


@dataclass
class FeatureSequence:
    """An encoded window: n timesteps x width values."""

    values: np.ndarray
    config: FeatureConfig
    label: int
    key: Optional[VehicleKey] = None
    anchor_frame: Optional[int] = None


@dataclass
class EncodedDataset:
    """Stacked feature sequences ready for the network."""

    X: np.ndarray
    y: np.ndarray
    config: FeatureConfig
    keys: List[Tuple[str, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, indices: Sequence[int]) -> "EncodedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(
            X=self.X[indices],
            y=self.y[indices],
            config=self.config,
            keys=[self.keys[i] for i in indices] if self.keys else [],
        )


def resolve_neighbor(
    ego: FrameRecord,
    slot: NeighborSlot,
    frame_index: int,
    all_tracks: TrackSet,
    recording_id: str = "0",
) -> Optional[FrameRecord]:
    """The neighbor's record at the same frame, or Absent (None) for ID 0."""
    neighbor_id = ego.neighbor_ids[slot.value]
    if neighbor_id == 0:
        return Absent
    record = all_tracks.record(recording_id, neighbor_id, frame_index)
    if record is None:
        raise DanglingNeighbor(ego.vehicle_id, neighbor_id, frame_index)
    return record


def compute_channels(
    ego: FrameRecord, neighbor: Optional[FrameRecord], max_range: float
) -> Tuple[float, float, float]:
    """Manhattan distances (dp, dv, da); absent neighbors give (max_range, 0, 0)."""
    if neighbor is None:
        return (float(max_range), 0.0, 0.0)
    dp = abs(ego.x - neighbor.x) + abs(ego.y - neighbor.y)
    dv = abs(ego.x_vel - neighbor.x_vel) + abs(ego.y_vel - neighbor.y_vel)
    da = abs(ego.x_acc - neighbor.x_acc) + abs(ego.y_acc - neighbor.y_acc)
    return (dp, dv, da)


def encode_window(
    window: LabeledWindow, config: FeatureConfig, all_tracks: TrackSet
) -> FeatureSequence:
    """Encode a window slot-major then channel-major per timestep."""
    if len(window.frames) != config.n:
        raise ConfigError(
            f"Window has {len(window.frames)} frames but config expects n={config.n}"
        )
    channel_indices = [_CHANNEL_INDEX[c] for c in config.channels]
    values = np.empty((config.n, config.width), dtype=np.float64)
    for t, ego in enumerate(window.frames):
        row = []
        for slot in config.slots:
            neighbor = resolve_neighbor(ego, slot, ego.frame, all_tracks, window.recording_id)
            channels = compute_channels(ego, neighbor, config.max_range)
            row.extend(channels[i] for i in channel_indices)
        values[t] = row
    return FeatureSequence(
        values=values,
        config=config,
        label=window.label,
        key=window.key,
        anchor_frame=window.anchor_frame,
    )


def encode_windows(
    windows: Iterable[LabeledWindow], config: FeatureConfig, all_tracks: TrackSet
) -> EncodedDataset:
    """Encode windows into an (N, n, width) array with labels."""
    sequences = [encode_window(w, config, all_tracks) for w in windows]
    if sequences:
        X = np.stack([s.values for s in sequences])
    else:
        X = np.empty((0, config.n, config.width), dtype=np.float64)
    y = np.array([s.label for s in sequences], dtype=np.float64)
    keys = [(s.key[0], s.key[1], s.anchor_frame) for s in sequences]
    return EncodedDataset(X=X, y=y, config=config, keys=keys)


# ---------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------


@dataclass
class Normalizer:
    """Per-feature-column min-max scaling parameters."""

    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, List[float]]) -> "Normalizer":
        return cls(
            mins=np.asarray(data["mins"], dtype=np.float64),
            maxs=np.asarray(data["maxs"], dtype=np.float64),
        )


def _as_array(sequences: Union[np.ndarray, Sequence[FeatureSequence]]) -> np.ndarray:
    if isinstance(sequences, np.ndarray):
        return sequences
    return np.stack([s.values for s in sequences])


def fit_normalizer(training_sequences: Union[np.ndarray, Sequence[FeatureSequence]]) -> Normalizer:
    """Column-wise min and max over every training timestep."""
    values = _as_array(training_sequences)
    if values.size == 0:
        raise ConfigError("Cannot fit a normalizer on an empty training set")
    flat = values.reshape(-1, values.shape[-1])
    return Normalizer(mins=flat.min(axis=0), maxs=flat.max(axis=0))


def apply_normalizer(sequence: np.ndarray, params: Normalizer) -> np.ndarray:
    """Affine min-max map; degenerate columns map to 0, out-of-range values are not clamped."""
    span = params.maxs - params.mins
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    scaled = (sequence - params.mins) / safe_span
    return np.where(degenerate, 0.0, scaled)


@dataclass
class FeatureManifest:
    """Everything needed to reproduce an encoding at inference time."""

    config: FeatureConfig
    normalizer: Optional[Normalizer] = None
    version: int = FEATURE_ORDER_VERSION

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.config.normalize and self.normalizer is not None:
            return apply_normalizer(X, self.normalizer)
        return X

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "feature_names": self.config.feature_names(),
            "config": self.config.to_dict(),
            "normalizer": self.normalizer.to_dict() if self.normalizer else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureManifest":
        version = int(data.get("version", 0))
        if version != FEATURE_ORDER_VERSION:
            raise ConfigError(
                f"Feature ordering version {version} is not supported "
                f"(expected {FEATURE_ORDER_VERSION})"
            )
        normalizer = data.get("normalizer")
        return cls(
            config=FeatureConfig.from_dict(data["config"]),
            normalizer=Normalizer.from_dict(normalizer) if normalizer else None,
            version=version,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()


def fit_manifest(config: FeatureConfig, train: EncodedDataset) -> FeatureManifest:
    """Build the manifest, fitting the normalizer on training data when enabled."""
    normalizer = fit_normalizer(train.X) if config.normalize else None
    return FeatureManifest(config=config, normalizer=normalizer)
