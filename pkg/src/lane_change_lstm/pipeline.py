"""Pipeline operations behind the command-line interface."""

import json
import time
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import load_json_config, resolve_settings
from .errors import ConfigError, DataSourceError, InputError, LaneChangeError
from .evaluation import (
    DEFAULT_THRESHOLD,
    MetricsReport,
    evaluate_probabilities,
    report_row,
    write_report_csv,
)
from .events import (
    DEFAULT_HORIZON,
    DatasetSplit,
    build_dataset,
    export_dataset,
    load_dataset_manifest,
    materialize_dataset,
)
from .experiments import RunResult, emit_figure_data, load_ablation_spec, run_ablation
from .features import FeatureConfig, encode_windows, fit_manifest
from .models import ValidationReport
from .network import DEFAULT_CELLS, NetworkDims, predict_proba
from .synthgen import SynthConfig, generate_recordings, write_recording
from .training import TrainConfig, train, write_history_csv
from .trajectory import TrackSet, all_tracks, load_recordings, validate_tracks

# Create logger for this module
logger = logging.getLogger(__name__)

HISTORY_NAME = "history.csv"
MODEL_DEFAULTS: Dict[str, Any] = {"cells": DEFAULT_CELLS, "features": {"preset": "cacc"}}


@dataclass
class TrainOutcome:
    checkpoint: Checkpoint
    run_dir: Path
    history_path: Path


@dataclass
class AblationOutcome:
    results: List[RunResult]
    results_path: Path
    figure_path: Path


class Pipeline:
    """Runs pipeline stages with standardized error handling and timing."""

    def __init__(self, jobs: int = 1, record_timing: bool = False) -> None:
        if jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}")
        self.jobs = jobs
        self.record_timing = record_timing
        logger.debug(f"Pipeline initialized with jobs={jobs}, record_timing={record_timing}")

    def _with_error_handling(self, operation: Callable[[], Any], operation_name: str) -> Any:
        """Execute operation, logging its duration and mapping input failures to InputError."""
        start_time = time.time()
        logger.debug(f"Starting {operation_name}")

        try:
            result = operation()
            total_time = time.time() - start_time
            logger.info(f"{operation_name} completed in {total_time:.2f}s")
            return result
        except LaneChangeError:
            raise
        except (OSError, json.JSONDecodeError, KeyError) as e:
            logger.error(f"Input error in {operation_name}: {e}")
            raise InputError(f"Error during {operation_name}: {e}")

    # ------------------------------------------------------------------
    # validate
    # ------------------------------------------------------------------

    def validate(self, directory: Union[str, Path], strict: bool = False) -> List[ValidationReport]:
        """Parse every recording in a directory and check its invariants."""

        def _validate() -> List[ValidationReport]:
            recordings = load_recordings(directory, strict=strict, jobs=self.jobs)
            reports = [validate_tracks(r.tracks, r.meta) for r in recordings]
            for report in reports:
                logger.info(
                    f"Recording {report.recording_id}: {report.track_count} tracks, "
                    f"{len(report.violations)} violations"
                )
            return reports

        return self._with_error_handling(_validate, "validate")

    # ------------------------------------------------------------------
    # extract
    # ------------------------------------------------------------------

    def extract(
        self,
        directory: Union[str, Path],
        out_dir: Union[str, Path],
        n: int = 5,
        seed: int = 0,
        split_fraction: float = 0.8,
        horizon: int = DEFAULT_HORIZON,
        stride: int = 1,
        strict: bool = False,
    ) -> DatasetSplit:
        """Build a balanced dataset and export it with its manifest."""

        def _extract() -> DatasetSplit:
            recordings = load_recordings(directory, strict=strict, jobs=self.jobs)
            split = build_dataset(
                all_tracks(recordings),
                n,
                seed,
                split_fraction,
                horizon=horizon,
                stride=stride,
            )
            export_dataset(split, out_dir, source=str(Path(directory).resolve()))
            return split

        return self._with_error_handling(_extract, "extract")

    def _load_dataset(self, dataset_dir: Union[str, Path]):
        manifest = load_dataset_manifest(dataset_dir)
        source = manifest.get("source")
        if not source:
            raise DataSourceError(f"Dataset manifest in {dataset_dir} does not name its recordings")
        tracks = all_tracks(load_recordings(source, jobs=self.jobs))
        return materialize_dataset(manifest, tracks), TrackSet(tracks)

    # ------------------------------------------------------------------
    # train
    # ------------------------------------------------------------------

    def resolve_train_settings(
        self,
        config_path: Optional[Union[str, Path]] = None,
        train_flags: Optional[Dict[str, Any]] = None,
        model_flags: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """Merge flags, the JSON config and defaults into TrainConfig and model settings."""
        file_values = load_json_config(config_path) if config_path else {}
        unknown = sorted(set(file_values) - {"train", "model"})
        if unknown:
            raise ConfigError(f"Unknown training config sections: {', '.join(unknown)}")
        train_settings = resolve_settings(
            TrainConfig().to_dict(), file_values.get("train"), train_flags, section="train"
        )
        model_settings = resolve_settings(
            MODEL_DEFAULTS, file_values.get("model"), model_flags, section="model"
        )
        return {
            "train": TrainConfig.from_dict(train_settings),
            "cells": int(model_settings["cells"]),
            "features": FeatureConfig.from_dict(model_settings["features"]),
        }

    def train(
        self,
        dataset_dir: Union[str, Path],
        run_dir: Union[str, Path],
        train_config: TrainConfig,
        features: FeatureConfig,
        cells: int = DEFAULT_CELLS,
    ) -> TrainOutcome:
        """Train on the dataset's train split and write checkpoint plus history."""

        def _train() -> TrainOutcome:
            split, track_set = self._load_dataset(dataset_dir)
            feature_config = features
            if feature_config.n != split.policy.n:
                logger.info(f"Using window length n={split.policy.n} from the dataset")
                feature_config = feature_config.with_changes(n=split.policy.n)

            raw = encode_windows(split.train, feature_config, track_set)
            manifest = fit_manifest(feature_config, raw)
            raw.X = manifest.transform(raw.X)
            dims = NetworkDims(input_size=feature_config.width, cells=cells)
            params, history = train(raw, feature_config, dims, train_config)

            checkpoint = Checkpoint(
                params=params,
                manifest=manifest,
                seed=train_config.seed,
                train_config=train_config.to_dict(),
            )
            save_checkpoint(run_dir, checkpoint)
            history_path = write_history_csv(
                history, Path(run_dir) / HISTORY_NAME, record_timing=self.record_timing
            )
            return TrainOutcome(checkpoint=checkpoint, run_dir=Path(run_dir), history_path=history_path)

        return self._with_error_handling(_train, "train")

    # ------------------------------------------------------------------
    # evaluate
    # ------------------------------------------------------------------

    def evaluate(
        self,
        checkpoint_path: Union[str, Path],
        dataset_dir: Union[str, Path],
        out_path: Union[str, Path],
        split_name: str = "test",
        threshold: float = DEFAULT_THRESHOLD,
        float32: bool = False,
    ) -> MetricsReport:
        """Score a checkpoint on one split of a dataset and write the report CSV."""

        def _evaluate() -> MetricsReport:
            checkpoint = load_checkpoint(checkpoint_path)
            split, track_set = self._load_dataset(dataset_dir)
            windows = split.test if split_name == "test" else split.train
            config = checkpoint.manifest.config
            if config.n != split.policy.n:
                raise ConfigError(
                    f"Checkpoint expects n={config.n} but the dataset has n={split.policy.n}"
                )
            encoded = encode_windows(windows, config, track_set)
            X = checkpoint.manifest.transform(encoded.X)
            probabilities = predict_proba(
                checkpoint.params, X, dtype=np.float32 if float32 else np.float64
            )
            report = evaluate_probabilities(probabilities, encoded.y, threshold)
            write_report_csv(
                [report_row(report, split=split_name, windows=len(encoded), threshold=threshold)],
                out_path,
            )
            return report

        return self._with_error_handling(_evaluate, "evaluate")

    # ------------------------------------------------------------------
    # ablate
    # ------------------------------------------------------------------

    def ablate(
        self,
        spec_path: Union[str, Path],
        out_path: Union[str, Path],
        figure_path: Optional[Union[str, Path]] = None,
        master_seed: Optional[int] = None,
    ) -> AblationOutcome:
        """Run an ablation spec and write results plus figure data."""

        def _ablate() -> AblationOutcome:
            spec = load_ablation_spec(spec_path)
            if master_seed is not None:
                spec.master_seed = master_seed
            results = run_ablation(spec, out_path, jobs=self.jobs, record_timing=self.record_timing)
            figure = Path(figure_path) if figure_path else _figure_path(Path(out_path))
            emit_figure_data(results, spec.axis, figure)
            return AblationOutcome(results=results, results_path=Path(out_path), figure_path=figure)

        return self._with_error_handling(_ablate, "ablate")

    # ------------------------------------------------------------------
    # synth
    # ------------------------------------------------------------------

    def synth(
        self,
        out_dir: Union[str, Path],
        config_path: Optional[Union[str, Path]] = None,
        flags: Optional[Dict[str, Any]] = None,
        recordings: int = 1,
    ) -> List[Path]:
        """Generate synthetic recordings into out_dir."""

        def _synth() -> List[Path]:
            file_values = load_json_config(config_path) if config_path else {}
            defaults = SynthConfig().to_dict()
            # mode-dependent fields stay unset unless given
            for key in ("maneuver_frames", "velocity_noise", "weave_amplitude"):
                defaults[key] = None
            settings = resolve_settings(defaults, file_values, flags, section="synth")
            config = SynthConfig.from_dict(settings)
            paths = []
            for recording, events in generate_recordings(config, recordings, self.jobs):
                paths.append(write_recording(out_dir, recording, events))
            return paths

        return self._with_error_handling(_synth, "synth")


def _figure_path(results_path: Path) -> Path:
    return results_path.with_name(f"{results_path.stem}_figure{results_path.suffix or '.csv'}")
