"""Declarative ablation grids with per-cell seeds and CSV reports."""

import hashlib
import json
import os
import logging
import tempfile
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import highd_data_dir, load_json_config
from .errors import ConfigError, DataSourceError
from .evaluation import (
    METRIC_NAMES,
    MetricsReport,
    confusion,
    format_percent,
    mean_metric,
    metrics,
)
from .events import DEFAULT_HORIZON, DatasetSplit, build_dataset
from .features import (
    Channel,
    EncodedDataset,
    FeatureConfig,
    NeighborSlot,
    cacc_config,
    encode_windows,
    fit_manifest,
)
from .models import NEIGHBOR_SLOT_NAMES, VehicleTrack
from .network import CELL_GRID, DEFAULT_CELLS, NetworkDims, predict_proba
from .synthgen import SynthConfig, generate_recordings
from .training import TrainConfig, train
from .trajectory import TrackSet, all_tracks, load_recordings

# Create logger for this module
logger = logging.getLogger(__name__)

AXES = ("cells", "channels", "frame_size", "slots")
SET_AXES = ("channels", "slots")

DEFAULT_GRIDS: Dict[str, List[Any]] = {
    "cells": list(CELL_GRID),
    "channels": [["dp"], ["dp", "dv"], ["dp", "dv", "da"]],
    "frame_size": [2, 3, 5, 8, 13],
    "slots": [
        ["LP", "PV", "RP"],
        ["LF", "FV", "RF"],
        ["LP", "PV", "RP", "LA", "RA"],
        list(NEIGHBOR_SLOT_NAMES),
    ],
}

STATUS_OK = "ok"


@dataclass
class DataSource:
    """Recordings directory, or an inline synthetic configuration.

    With neither set, the directory named by HIGHD_DATA_DIR is used.
    """

    recordings: Optional[str] = None
    synth: Optional[SynthConfig] = None
    synth_recordings: int = 1

    def __post_init__(self) -> None:
        if self.recordings is not None and self.synth is not None:
            raise ConfigError("A data source is either a recordings directory or a synth config")
        if self.synth_recordings < 1:
            raise ConfigError("synth_recordings must be >= 1")

    def describe(self) -> Dict[str, Any]:
        if self.synth is not None:
            return {"synth": self.synth.to_dict(), "synth_recordings": self.synth_recordings}
        return {"recordings": self.recordings}

    def load_tracks(self, jobs: int = 1) -> List[VehicleTrack]:
        if self.synth is not None:
            generated = generate_recordings(self.synth, self.synth_recordings, jobs)
            return all_tracks(recording for recording, _ in generated)
        directory = self.recordings
        if directory is None:
            env_dir = highd_data_dir()
            if env_dir is None:
                raise DataSourceError(
                    "Data source has no recordings directory and HIGHD_DATA_DIR is not set"
                )
            directory = str(env_dir)
        return all_tracks(load_recordings(directory, jobs=jobs))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DataSource":
        synth = data.get("synth")
        return cls(
            recordings=data.get("recordings"),
            synth=SynthConfig.from_dict(synth) if synth is not None else None,
            synth_recordings=int(data.get("synth_recordings", 1)),
        )


@dataclass
class ExperimentBase:
    """Settings held fixed while one axis varies."""

    features: FeatureConfig = field(default_factory=cacc_config)
    cells: int = DEFAULT_CELLS
    train: TrainConfig = field(default_factory=TrainConfig)
    split_fraction: float = 0.8
    horizon: int = DEFAULT_HORIZON

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentBase":
        known = {"features", "cells", "train", "split_fraction", "horizon"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown base keys: {', '.join(unknown)}")
        return cls(
            features=FeatureConfig.from_dict(data["features"]) if "features" in data else cacc_config(),
            cells=int(data.get("cells", DEFAULT_CELLS)),
            train=TrainConfig.from_dict(data.get("train", {})),
            split_fraction=float(data.get("split_fraction", 0.8)),
            horizon=int(data.get("horizon", DEFAULT_HORIZON)),
        )


def _canonical_value(axis: str, value: Any) -> Any:
    if axis in SET_AXES:
        if isinstance(value, str):
            value = [value]
        if axis == "channels":
            parsed = {Channel.parse(c) for c in value}
            return tuple(c.value for c in Channel if c in parsed)
        parsed_slots = {NeighborSlot.parse(s) for s in value}
        return tuple(s.name for s in NeighborSlot if s in parsed_slots)
    number = int(value)
    if number < 1:
        raise ConfigError(f"{axis} values must be >= 1, got {value}")
    return number


def format_axis_value(axis: str, value: Any) -> str:
    """CSV label of an axis value: '128', '5', 'dp+dv', 'PV+LP+RP'."""
    if axis in SET_AXES:
        return "+".join(value)
    return str(value)


@dataclass
class AblationSpec:
    """One varying axis over a grid; everything else comes from base."""

    axis: str
    grid: List[Any]
    base: ExperimentBase = field(default_factory=ExperimentBase)
    repeats: int = 3
    master_seed: int = 0
    source: DataSource = field(default_factory=DataSource)

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.grid:
            raise ConfigError("Ablation grid must not be empty")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        self.grid = [_canonical_value(self.axis, v) for v in self.grid]
        labels = [format_axis_value(self.axis, v) for v in self.grid]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"Ablation grid has duplicate values: {labels}")

    def cell_settings(self, value: Any) -> Tuple[FeatureConfig, int]:
        """Feature config and cell count for one grid value."""
        features, cells = self.base.features, self.base.cells
        if self.axis == "cells":
            cells = value
        elif self.axis == "channels":
            features = features.with_changes(channels=value)
        elif self.axis == "frame_size":
            features = features.with_changes(n=value)
        elif self.axis == "slots":
            features = features.with_changes(slots=value)
        return features, cells

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AblationSpec":
        data = dict(data)
        preset = data.pop("preset", None)
        axis = data.pop("axis", preset)
        if axis is None:
            raise ConfigError("Ablation spec needs an 'axis' or a 'preset'")
        grid = data.pop("grid", None)
        if grid is None:
            if axis not in DEFAULT_GRIDS:
                raise ConfigError(f"No default grid for axis {axis!r}")
            grid = DEFAULT_GRIDS[axis]
        known = {"base", "repeats", "master_seed", "source"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown ablation keys: {', '.join(unknown)}")
        return cls(
            axis=axis,
            grid=list(grid),
            base=ExperimentBase.from_dict(data.get("base", {})),
            repeats=int(data.get("repeats", 3)),
            master_seed=int(data.get("master_seed", 0)),
            source=DataSource.from_dict(data.get("source", {})),
        )


def load_ablation_spec(path: Union[str, Path]) -> AblationSpec:
    return AblationSpec.from_dict(load_json_config(path))


@dataclass
class RunResult:
    """Outcome of one (grid value, repeat) cell."""

    axis: str
    value: str
    repeat: int
    seed: int
    config_hash: str
    report: Optional[MetricsReport] = None
    seconds: float = 0.0
    status: str = STATUS_OK

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def row(self, record_timing: bool = False) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "axis": self.axis,
            "value": self.value,
            "repeat": self.repeat,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "status": self.status,
        }
        for name in METRIC_NAMES:
            row[name] = format_percent(self.report.metric(name)) if self.report else ""
        for name in ("tp", "fp", "tn", "fn"):
            row[name] = getattr(self.report.counts, name) if self.report else ""
        if record_timing:
            row["seconds"] = round(self.seconds, 3)
        return row


def cell_seed(master_seed: int, axis: str, value_label: str, repeat: int) -> int:
    """Seed from (master seed, axis, value, repeat); independent of grid position."""
    digest = hashlib.sha256(json.dumps([master_seed, axis, value_label, repeat]).encode("utf-8"))
    return int(digest.hexdigest()[:15], 16)


def config_hash(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass
class CellJob:
    """Everything one worker needs to train and evaluate a cell."""

    result: RunResult
    features: FeatureConfig
    dims: NetworkDims
    train_config: TrainConfig
    train_set: EncodedDataset
    test_set: EncodedDataset


def run_cell(job: CellJob) -> RunResult:
    """Train and evaluate one cell; failures become a status, not an exception."""
    result = job.result
    try:
        manifest = fit_manifest(job.features, job.train_set)
        train_set = EncodedDataset(
            X=manifest.transform(job.train_set.X), y=job.train_set.y, config=job.features
        )
        params, history = train(train_set, job.features, job.dims, job.train_config)
        probabilities = predict_proba(params, manifest.transform(job.test_set.X))
        result.report = metrics(confusion(probabilities, job.test_set.y))
        result.seconds = history.total_seconds
    except Exception as e:
        logger.error(f"Cell {result.axis}={result.value} repeat {result.repeat} failed: {e}")
        result.status = f"failed: {e}"
    return result


def _write_results_atomic(results: Sequence[RunResult], path: Path, record_timing: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.row(record_timing) for r in results])
    fd, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            frame.to_csv(f, index=False, lineterminator="\n")
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise


class AblationRunner:
    """Builds datasets once per window length and runs every grid cell."""

    def __init__(self, spec: AblationSpec, tracks: Sequence[VehicleTrack]) -> None:
        self.spec = spec
        self.tracks = list(tracks)
        self._track_set = TrackSet(self.tracks)
        self._splits: Dict[int, DatasetSplit] = {}
        logger.debug(f"AblationRunner initialized for axis {spec.axis} with {len(self.tracks)} tracks")

    def dataset(self, n: int) -> DatasetSplit:
        """Balanced split for window length n, cached; built with the master seed."""
        if n not in self._splits:
            self._splits[n] = build_dataset(
                self.tracks,
                n,
                self.spec.master_seed,
                self.spec.base.split_fraction,
                horizon=self.spec.base.horizon,
            )
        return self._splits[n]

    def _config_payload(self, features: FeatureConfig, dims: NetworkDims, train_config: TrainConfig) -> Dict[str, Any]:
        return {
            "features": features.to_dict(),
            "dims": dims.to_dict(),
            "train": train_config.to_dict(),
            "dataset": {
                "master_seed": self.spec.master_seed,
                "split_fraction": self.spec.base.split_fraction,
                "horizon": self.spec.base.horizon,
                "source": self.spec.source.describe(),
            },
        }

    def jobs(self) -> List[Union[CellJob, RunResult]]:
        """One entry per (value, repeat) in grid order; failed preparations are results."""
        entries: List[Union[CellJob, RunResult]] = []
        for value in self.spec.grid:
            label = format_axis_value(self.spec.axis, value)
            features, cells = self.spec.cell_settings(value)
            prepared: Optional[Tuple[EncodedDataset, EncodedDataset]] = None
            failure = None
            try:
                split = self.dataset(features.n)
                prepared = (
                    encode_windows(split.train, features, self._track_set),
                    encode_windows(split.test, features, self._track_set),
                )
            except Exception as e:
                failure = f"failed: {e}"
                logger.error(f"Could not prepare data for {self.spec.axis}={label}: {e}")

            dims = NetworkDims(input_size=features.width, cells=cells)
            for repeat in range(self.spec.repeats):
                seed = cell_seed(self.spec.master_seed, self.spec.axis, label, repeat)
                train_config = TrainConfig.from_dict({**self.spec.base.train.to_dict(), "seed": seed})
                result = RunResult(
                    axis=self.spec.axis,
                    value=label,
                    repeat=repeat,
                    seed=seed,
                    config_hash=config_hash(self._config_payload(features, dims, train_config)),
                )
                if prepared is None:
                    result.status = failure or "failed"
                    entries.append(result)
                else:
                    entries.append(CellJob(result, features, dims, train_config, *prepared))
        return entries

    def run(
        self, out_path: Union[str, Path], jobs: int = 1, record_timing: bool = False
    ) -> List[RunResult]:
        out_path = Path(out_path)
        entries = self.jobs()
        results: List[Optional[RunResult]] = [e if isinstance(e, RunResult) else None for e in entries]

        def completed(index: int, result: RunResult) -> None:
            results[index] = result
            done = [r for r in results if r is not None]
            _write_results_atomic(done, out_path, record_timing)
            logger.info(
                f"[{len(done)}/{len(results)}] {result.axis}={result.value} repeat {result.repeat}: "
                f"{result.status if not result.ok else 'accuracy ' + format_percent(result.report.accuracy)}"
            )

        pending = [(i, e) for i, e in enumerate(entries) if isinstance(e, CellJob)]
        if jobs > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(run_cell, job): i for i, job in pending}
                for future in as_completed(futures):
                    completed(futures[future], future.result())
        else:
            for i, job in pending:
                completed(i, run_cell(job))
        if not pending:
            _write_results_atomic([r for r in results if r is not None], out_path, record_timing)
        return [r for r in results if r is not None]


def run_ablation(
    spec: AblationSpec,
    out_path: Union[str, Path],
    jobs: int = 1,
    record_timing: bool = False,
    tracks: Optional[Sequence[VehicleTrack]] = None,
) -> List[RunResult]:
    """Run every grid value `repeats` times and write the results CSV."""
    if tracks is None:
        tracks = spec.source.load_tracks(jobs)
    logger.info(
        f"Ablation over {spec.axis}: {len(spec.grid)} values x {spec.repeats} repeats"
    )
    return AblationRunner(spec, tracks).run(out_path, jobs=jobs, record_timing=record_timing)


def _ordered_labels(results: Sequence[RunResult], axis: str) -> List[str]:
    labels: List[str] = []
    for r in results:
        if r.value not in labels:
            labels.append(r.value)
    if axis not in SET_AXES:
        labels.sort(key=int)
    return labels


def emit_figure_data(
    results: Sequence[RunResult], axis: str, path: Optional[Union[str, Path]] = None
) -> pd.DataFrame:
    """Mean, min and max of each metric over repeats, one row per axis value."""
    if not results:
        raise ConfigError("No results to summarize")
    rows = []
    for label in _ordered_labels(results, axis):
        reports = [r.report for r in results if r.value == label and r.ok and r.report]
        row: Dict[str, Any] = {axis: label, "runs": len(reports)}
        for name in METRIC_NAMES:
            values = [r.metric(name) for r in reports if r.metric(name) is not None]
            row[f"{name}_mean"] = format_percent(mean_metric(reports, name))
            row[f"{name}_min"] = format_percent(min(values) if values else None)
            row[f"{name}_max"] = format_percent(max(values) if values else None)
        rows.append(row)
    frame = pd.DataFrame(rows)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    return frame


def _means(results: Sequence[RunResult], metric: str) -> Dict[str, Optional[float]]:
    reports: Dict[str, List[MetricsReport]] = {}
    for r in results:
        reports.setdefault(r.value, [])
        if r.ok and r.report:
            reports[r.value].append(r.report)
    return {label: mean_metric(rs, metric) for label, rs in reports.items()}


def best_value(results: Sequence[RunResult], metric: str = "accuracy") -> Optional[str]:
    """Grid value with the highest mean metric; first in result order on ties."""
    best_label, best = None, -np.inf
    for label, mean in _means(results, metric).items():
        if mean is not None and mean > best:
            best_label, best = label, mean
    return best_label


def compare_values(
    results: Sequence[RunResult], a: str, b: str, metric: str = "accuracy"
) -> Optional[float]:
    """Mean metric of b minus mean metric of a, in percentage points."""
    means = _means(results, metric)
    if means.get(a) is None or means.get(b) is None:
        return None
    return 100.0 * (means[b] - means[a])
