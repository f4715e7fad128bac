"""Versioned checkpoint: a JSON envelope plus a little-endian float64 payload."""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .errors import CheckpointError
from .features import FeatureManifest
from .network import NetworkDims, NetworkParams

# Create logger for this module
logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lane-change-lstm"
CHECKPOINT_VERSION = 1
ENVELOPE_NAME = "model.json"
PAYLOAD_NAME = "model.bin"
PAYLOAD_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to encode inputs for them."""

    params: NetworkParams
    manifest: FeatureManifest
    seed: Optional[int] = None
    train_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def dims(self) -> NetworkDims:
        return self.params.dims


def _payload_bytes(params: NetworkParams) -> bytes:
    return b"".join(
        np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes() for _, array in params.named_arrays()
    )


def save_checkpoint(directory: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write model.json and model.bin into directory; returns the envelope path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = checkpoint.params
    payload = _payload_bytes(params)

    envelope = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": params.dims.to_dict(),
        "seed": checkpoint.seed,
        "train_config": checkpoint.train_config,
        "feature_manifest": checkpoint.manifest.to_dict(),
        "feature_manifest_sha256": checkpoint.manifest.sha256(),
        "parameter_order": [
            {"name": name, "shape": list(array.shape)} for name, array in params.named_arrays()
        ],
        "payload": PAYLOAD_NAME,
        "payload_dtype": PAYLOAD_DTYPE.str,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }

    with open(directory / PAYLOAD_NAME, "wb") as f:
        f.write(payload)
    envelope_path = directory / ENVELOPE_NAME
    with open(envelope_path, "w", encoding="utf-8") as f:
        json.dump(envelope, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved checkpoint ({params.parameter_count} parameters) to {directory}")
    return envelope_path


def _read_envelope(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            envelope = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint envelope {path}: {e}")
    if envelope.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    if envelope.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint version {envelope.get('version')} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return envelope


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Load a checkpoint from its directory or its model.json path."""
    path = Path(path)
    envelope_path = path / ENVELOPE_NAME if path.is_dir() else path
    envelope = _read_envelope(envelope_path)

    manifest = FeatureManifest.from_dict(envelope["feature_manifest"])
    if manifest.sha256() != envelope["feature_manifest_sha256"]:
        raise CheckpointError("Feature manifest hash does not match the envelope")

    payload_path = envelope_path.parent / envelope["payload"]
    try:
        payload = payload_path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint payload {payload_path}: {e}")
    if hashlib.sha256(payload).hexdigest() != envelope["payload_sha256"]:
        raise CheckpointError(f"Payload {payload_path} is corrupt (sha256 mismatch)")

    values = np.frombuffer(payload, dtype=np.dtype(envelope["payload_dtype"]))
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for entry in envelope["parameter_order"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if offset + size > values.size:
            raise CheckpointError("Payload is shorter than the declared parameter shapes")
        arrays[entry["name"]] = values[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != values.size:
        raise CheckpointError("Payload is longer than the declared parameter shapes")

    try:
        params = NetworkParams.from_named(arrays)
    except KeyError as e:
        raise CheckpointError(f"Checkpoint is missing parameter {e}")
    dims = NetworkDims(**envelope["dims"])
    if params.dims != dims:
        raise CheckpointError(f"Parameter shapes give {params.dims}, envelope declares {dims}")
    if dims.input_size != manifest.config.width:
        raise CheckpointError(
            f"Network input width {dims.input_size} does not match feature width "
            f"{manifest.config.width}"
        )

    logger.debug(f"Loaded checkpoint {envelope_path} with dims {dims}")
    return Checkpoint(
        params=params,
        manifest=manifest,
        seed=envelope.get("seed"),
        train_config=envelope.get("train_config", {}),
    )
