"""Lane change prediction with a two-layer LSTM over ACC/CACC neighbor features.

Parses HighD-style trajectory recordings, extracts lane change and lane-keep
windows, encodes relative neighbor states, and trains a from-scratch LSTM.
"""

__version__ = "1.0.0"

from .errors import InputError, LaneChangeError, ModelError
from .features import FeatureConfig, acc_config, cacc_config
from .models import FrameRecord, LabeledWindow, LaneChangeEvent, VehicleTrack
from .network import NetworkDims, NetworkParams, init_params, network_backward, network_forward
from .pipeline import Pipeline
from .training import TrainConfig, train

__all__ = [
    "LaneChangeError",
    "InputError",
    "ModelError",
    "FeatureConfig",
    "acc_config",
    "cacc_config",
    "FrameRecord",
    "LabeledWindow",
    "LaneChangeEvent",
    "VehicleTrack",
    "NetworkDims",
    "NetworkParams",
    "init_params",
    "network_forward",
    "network_backward",
    "Pipeline",
    "TrainConfig",
    "train",
]
