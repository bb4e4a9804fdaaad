"""
Unit tests for run configuration loading and overrides.
"""

from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

import acmamba
from acmamba.launchers.pipeline import apply_overrides, load_run_config
from acmamba.models.config import MaskStrategy, RunConfig, SamplingMode, TrainConfig


def _write_yaml(path: Path, data) -> str:
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.mark.unit
class TestTrainConfig:
    """Test cases for training hyperparameters."""

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.lr, cfg.psi, cfg.beta_max, cfg.eta, cfg.k) == (100, 5e-4, 150.0, 2.0, 0.01, 2.0)
        assert cfg.hidden_dim == 256 and cfg.state_dim == 16
        assert cfg.sampling == SamplingMode.REGION
        assert cfg.mask_strategy == MaskStrategy.DIFFICULTY
        assert cfg.consensus is True

    def test_region_target(self):
        """ceil(H*W / psi), clamped to [1, H*W]."""
        assert TrainConfig(psi=150).n_regions_target(100, 100) == 67
        assert TrainConfig(psi=1e6).n_regions_target(10, 10) == 1
        assert TrainConfig(psi=0.5).n_regions_target(3, 3) == 9

    @pytest.mark.parametrize("update", [{"eta": 1.0}, {"psi": 0}, {"epochs": -1}, {"dtype": "float16"}, {"lr": 0}])
    def test_rejects_out_of_range(self, update):
        with pytest.raises(ValidationError):
            TrainConfig(**update)

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=0.1)

    def test_enum_values_from_strings(self):
        cfg = TrainConfig(sampling="dense", mask_strategy="random")
        assert cfg.sampling == "dense" and cfg.mask_strategy == "random"


@pytest.mark.unit
class TestRunConfig:
    """Test cases for the root configuration."""

    def test_flat_train_mapping(self):
        """A flat mapping of train keys is read as the train section."""
        config = RunConfig.model_validate({"epochs": 5, "psi": 20})
        assert config.train.epochs == 5 and config.train.psi == 20
        assert config.scene == RunConfig().scene

    def test_log_level_normalized(self):
        assert RunConfig(log_level="debug").log_level == "DEBUG"
        with pytest.raises(ValidationError):
            RunConfig(log_level="chatty")

    def test_packaged_default_matches_model_defaults(self):
        path = Path(acmamba.__file__).parent / "configs" / "default.yaml"
        assert load_run_config(str(path)) == RunConfig()


@pytest.mark.unit
class TestLoadRunConfig:
    """Test cases for YAML loading."""

    def test_nested_file(self, tmp_path):
        path = _write_yaml(tmp_path / "run.yaml", {"train": {"epochs": 7}, "scene": {"height": 32}})
        config = load_run_config(path)
        assert config.train.epochs == 7 and config.scene.height == 32

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_run_config(str(path)) == RunConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run_config(str(tmp_path / "absent.yaml"))

    def test_invalid_file(self, tmp_path):
        path = _write_yaml(tmp_path / "bad.yaml", {"train": {"eta": 2.0}})
        with pytest.raises(ValueError, match="Invalid configuration"):
            load_run_config(path)


@pytest.mark.unit
class TestApplyOverrides:
    """Test cases for command-line overrides."""

    def test_seed_applies_to_scene_and_train(self):
        config = apply_overrides(RunConfig(), seed=9)
        assert config.scene.seed == 9 and config.train.seed == 9

    def test_output_dir(self):
        assert apply_overrides(RunConfig(), output_dir="elsewhere").output_dir == "elsewhere"

    def test_assignments_parse_yaml_scalars(self):
        config = apply_overrides(
            RunConfig(), assignments=["train.eta=0.05", "train.consensus=false", "detection.chunk_length=128"]
        )
        assert config.train.eta == 0.05
        assert config.train.consensus is False
        assert config.detection.chunk_length == 128

    def test_top_level_assignment(self):
        assert apply_overrides(RunConfig(), assignments=["evaluate=false"]).evaluate is False

    @pytest.mark.parametrize("assignment", ["train.eta", "=3", "nosuch.key=1", "train.eta=5"])
    def test_bad_assignment(self, assignment):
        with pytest.raises(ValueError):
            apply_overrides(RunConfig(), assignments=[assignment])

    def test_original_is_untouched(self):
        config = RunConfig()
        apply_overrides(config, seed=1, assignments=["train.epochs=1"])
        assert config.train.epochs == 100 and config.train.seed == 42


@pytest.mark.unit
class TestTestSuiteDefaults:
    """Test cases for the suite's own configuration."""

    def test_slow_runs_are_deselected_by_default(self, pytestconfig):
        """A bare pytest run leaves out the acceptance-scale tests."""
        addopts = pytestconfig.getini("addopts")
        assert "-m" in addopts and addopts[addopts.index("-m") + 1] == "not slow"
