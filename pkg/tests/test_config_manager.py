import json
from pathlib import Path

import pytest

from config_manager import DEFAULT_CONFIG, ConfigManager
from errors import ConfigError
from locnet import BackboneConfig
from trainer import Schedule


def _write(tmp_path, document):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return str(path)


def test_defaults_without_file():
    config = ConfigManager()
    assert config.as_dict() == DEFAULT_CONFIG
    assert config.get("dataset.n_scenes") == 1000
    assert config.get("dataset.missing", "x") == "x"


def test_file_is_merged_over_defaults(tmp_path):
    config = ConfigManager(_write(tmp_path, {"dataset": {"n_scenes": 12, "shape_mix": {"box": 1.0}}}))
    assert config.get("dataset.n_scenes") == 12
    assert config.get("dataset.image_size") == 96
    assert config.get("dataset.shape_mix") == {"box": 1.0, "cylinder": 0.25, "ngon": 0.2, "union": 0.2}


def test_unknown_key_names_its_dotted_path(tmp_path):
    with pytest.raises(ConfigError, match="dataset.shape_mix.sphere"):
        ConfigManager(_write(tmp_path, {"dataset": {"shape_mix": {"sphere": 0.5}}}))
    with pytest.raises(ConfigError, match="extras"):
        ConfigManager(_write(tmp_path, {"extras": {}}))


def test_section_must_stay_an_object(tmp_path):
    with pytest.raises(ConfigError, match="oracle"):
        ConfigManager(_write(tmp_path, {"oracle": 3}))


def test_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(str(bad))
    with pytest.raises(ConfigError):
        ConfigManager(str(tmp_path / "absent.json"))
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(str(listed))


def test_set_validates_keys():
    config = ConfigManager()
    config.set("training.batch_size", 4)
    assert config.get("training.batch_size") == 4
    with pytest.raises(ConfigError):
        config.set("training.momentum", 0.9)


def test_get_returns_copies():
    config = ConfigManager()
    config.get("seeds.experiments").append(99)
    assert config.get("seeds.experiments") == [0, 1, 2]


def test_typed_builders():
    config = ConfigManager()
    assert config.dataset_spec().n_scenes == 1000
    assert config.oracle_config().friction_coeff == 0.5
    backbone = config.backbone_config()
    assert isinstance(backbone, BackboneConfig)
    assert backbone.input_size == (96, 96)
    assert config.backbone_config(48).input_size == (48, 48)
    schedule = config.schedule()
    assert isinstance(schedule, Schedule)
    assert schedule.total_epochs == 40
    assert config.eval_config().proposal_sweep == (100, 300, 1000)
    assert config.quality_config().crops_per_scene == 20
    assert config.training_config().batch_size == 16


def test_builders_wrap_validation_errors(tmp_path):
    config = ConfigManager(_write(tmp_path, {"dataset": {"split_fractions": [0.5, 0.1, 0.1]}}))
    with pytest.raises(ConfigError, match="dataset"):
        config.dataset_spec()
    config = ConfigManager(_write(tmp_path, {"schedule": {"phases": [
        {"epochs": 1, "xi": 0.0, "learning_rate": 0.001, "teacher_forcing": True, "early_stopping": False}]}}))
    with pytest.raises(ConfigError):
        config.schedule()


def test_save_roundtrip(tmp_path):
    config = ConfigManager()
    config.set("dataset.n_scenes", 5)
    path = config.save_config(tmp_path / "out" / "saved.json")
    assert ConfigManager(str(path)).as_dict() == config.as_dict()


def test_shipped_config_matches_defaults():
    shipped = Path(__file__).resolve().parents[1] / "config" / "config.json"
    assert ConfigManager(str(shipped)).as_dict() == DEFAULT_CONFIG
