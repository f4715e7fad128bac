"""Tests for the Pipeline stages."""

import json
import os

import pytest

from lane_change_lstm.errors import ConfigError, DataSourceError
from lane_change_lstm.features import acc_config
from lane_change_lstm.pipeline import Pipeline
from lane_change_lstm.training import TrainConfig


class TestResolveTrainSettings:
    """Test cases for Pipeline.resolve_train_settings."""

    def setup_method(self):
        """Set up test fixtures."""
        self.pipeline = Pipeline()

    def test_defaults(self):
        """Test that no file and no flags give the defaults."""
        settings = self.pipeline.resolve_train_settings()

        assert settings["train"] == TrainConfig()
        assert settings["cells"] == 128
        assert settings["features"].width == 120

    def test_precedence(self, tmp_path):
        """Test flag > config file > default."""
        path = tmp_path / "train.json"
        path.write_text(
            json.dumps(
                {
                    "train": {"epochs": 5, "learning_rate": 0.01},
                    "model": {"cells": 16, "features": {"preset": "acc"}},
                }
            ),
            encoding="utf-8",
        )

        settings = self.pipeline.resolve_train_settings(
            path, train_flags={"epochs": 2, "batch_size": None}, model_flags={"cells": None}
        )

        assert settings["train"].epochs == 2
        assert settings["train"].learning_rate == 0.01
        assert settings["train"].batch_size == 32
        assert settings["cells"] == 16
        assert settings["features"] == acc_config()

    @pytest.mark.parametrize(
        "content",
        [{"optimizer": {}}, {"train": {"momentum": 0.9}}, {"model": {"layers": 3}}],
    )
    def test_unknown_keys(self, tmp_path, content):
        """Test that unknown sections and keys are config errors."""
        path = tmp_path / "train.json"
        path.write_text(json.dumps(content), encoding="utf-8")

        with pytest.raises(ConfigError):
            self.pipeline.resolve_train_settings(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing config file is a config error."""
        with pytest.raises(ConfigError, match="does not exist"):
            self.pipeline.resolve_train_settings(tmp_path / "nope.json")


class TestPipelineStages:
    """Test cases for stage-level behavior."""

    def test_validate_empty_directory(self, tmp_path):
        """Test that a directory without recordings is a data source error."""
        with pytest.raises(DataSourceError, match="no recordings found"):
            Pipeline().validate(tmp_path)

    def test_synth_then_validate(self, tmp_path):
        """Test that synthesized recordings validate cleanly."""
        pipeline = Pipeline()
        paths = pipeline.synth(tmp_path, flags={"vehicle_count": 20, "seed": 1}, recordings=2)

        reports = pipeline.validate(tmp_path)

        assert len(paths) == 2
        assert [r.recording_id for r in reports] == ["01", "02"]
        assert all(r.is_valid for r in reports)


@pytest.mark.slow
class TestLearnability:
    """The default model learns the velocity-mode synthetic task."""

    def test_velocity_mode_accuracy(self, tmp_path):
        """Test test-split accuracy of at least 0.95 on 500 synthetic vehicles."""
        pipeline = Pipeline()
        pipeline.synth(tmp_path / "rec", flags={"vehicle_count": 500, "seed": 0})
        pipeline.extract(tmp_path / "rec", tmp_path / "data", n=5, seed=0)

        settings = pipeline.resolve_train_settings(train_flags={"epochs": 30, "seed": 0})
        pipeline.train(
            tmp_path / "data",
            tmp_path / "run",
            settings["train"],
            settings["features"],
            settings["cells"],
        )
        report = pipeline.evaluate(tmp_path / "run", tmp_path / "data", tmp_path / "metrics.csv")

        assert report.accuracy >= 0.95


@pytest.mark.integration
@pytest.mark.skipif(not os.getenv("HIGHD_DATA_DIR"), reason="HIGHD_DATA_DIR not set")
class TestHighD:
    """Checks against the licensed recordings when they are available."""

    def test_recordings_validate(self):
        """Test that every licensed recording parses and validates."""
        reports = Pipeline(jobs=4).validate(os.environ["HIGHD_DATA_DIR"])
        assert reports
        assert all(r.is_valid for r in reports)

    @pytest.mark.slow
    @pytest.mark.parametrize("preset,low,high", [("cacc", 0.88, 1.0), ("acc", 0.50, 0.70)])
    def test_full_scale_accuracy(self, tmp_path, preset, low, high):
        """Test CACC and ACC accuracy bands on the licensed recordings."""
        pipeline = Pipeline(jobs=4)
        pipeline.extract(os.environ["HIGHD_DATA_DIR"], tmp_path / "data", n=5, seed=0)
        settings = pipeline.resolve_train_settings(
            train_flags={"seed": 0}, model_flags={"features": {"preset": preset}}
        )

        pipeline.train(
            tmp_path / "data", tmp_path / "run", settings["train"], settings["features"], 128
        )
        report = pipeline.evaluate(tmp_path / "run", tmp_path / "data", tmp_path / "metrics.csv")

        assert low <= report.accuracy <= high
