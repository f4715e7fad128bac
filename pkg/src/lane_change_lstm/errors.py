"""Exception hierarchy for the lane change prediction pipeline."""

from typing import Optional


class LaneChangeError(Exception):
    """Base exception for pipeline errors."""

    pass


class InputError(LaneChangeError):
    """Raised when user-supplied data or configuration is unusable."""

    pass


class ConfigError(InputError):
    """Raised when a configuration violates its invariants."""

    pass


class DataSourceError(InputError):
    """Raised when recordings or dataset files cannot be located."""

    pass


class TrackParseError(InputError):
    """Base exception for tracks-CSV parsing failures."""

    pass


class MalformedRow(TrackParseError):
    """A data row is non-numeric, has the wrong column count or breaks a record invariant."""

    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"Malformed row at line {line}: {reason}")


class MissingColumn(TrackParseError):
    """The header lacks a required column."""

    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"Missing required column: {column}")


class NonMonotonicFrames(TrackParseError):
    """A vehicle has a duplicate or decreasing frame index."""

    def __init__(self, vehicle_id: int, frame: int, line: int) -> None:
        self.vehicle_id = vehicle_id
        self.frame = frame
        self.line = line
        super().__init__(
            f"Vehicle {vehicle_id}: frame {frame} at line {line} does not increase"
        )


class FrameGap(TrackParseError):
    """A vehicle's frames skip an index (strict parsing only)."""

    def __init__(self, vehicle_id: int, missing_frame: int) -> None:
        self.vehicle_id = vehicle_id
        self.missing_frame = missing_frame
        super().__init__(f"Vehicle {vehicle_id}: missing frame {missing_frame}")


class DanglingNeighbor(InputError):
    """A nonzero neighbor ID has no record at the requested frame."""

    def __init__(self, vehicle_id: int, neighbor_id: int, frame: int) -> None:
        self.vehicle_id = vehicle_id
        self.neighbor_id = neighbor_id
        self.frame = frame
        super().__init__(
            f"Vehicle {vehicle_id} references neighbor {neighbor_id} "
            f"with no record at frame {frame}"
        )


class EmptyClass(InputError):
    """A dataset is missing one of the two classes."""

    pass


class LengthMismatch(InputError):
    """Probabilities and labels differ in length."""

    def __init__(self, n_probabilities: int, n_labels: int) -> None:
        super().__init__(
            f"Got {n_probabilities} probabilities but {n_labels} labels"
        )


class CheckpointError(InputError):
    """A checkpoint is unreadable, corrupt or incompatible."""

    pass


class ModelError(LaneChangeError):
    """Base exception for network contract violations."""

    pass


class ShapeMismatch(ModelError):
    """Input or state shapes disagree with the parameters."""

    def __init__(self, what: str, expected: object, got: Optional[object]) -> None:
        super().__init__(f"{what}: expected shape {expected}, got {got}")


class StaleCache(ModelError):
    """A forward cache does not belong to the given inputs or parameters."""

    pass
