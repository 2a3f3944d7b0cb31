import json

import pytest

from utils.errors import ConfigError
from utils.settings import DEFAULT_CONFIG_PATH, TrainConfig, apply_overrides, load_codec_settings


def test_default_file_matches_model_defaults():
    settings = load_codec_settings()
    assert DEFAULT_CONFIG_PATH.exists()
    assert settings.train == TrainConfig()
    assert settings.decode.level == 6
    assert settings.metrics.samples == 100_000


def test_yaml_file(tmp_path):
    path = tmp_path / "codec.yaml"
    path.write_text("train:\n  seed: 7\n  preset: 165KB\nlog_level: DEBUG\n", encoding="utf-8")
    settings = load_codec_settings(str(path))
    assert settings.train.seed == 7
    assert settings.train.fine_layout() == (24, 58, 10)
    assert settings.log_level == "DEBUG"


def test_environment_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "codec.json"
    path.write_text(json.dumps({"train": {"seed": 3, "batch_size": 512}}), encoding="utf-8")
    monkeypatch.setenv("HNSC_TRAIN__SEED", "11")
    settings = load_codec_settings(str(path))
    assert settings.train.seed == 11
    assert settings.train.batch_size == 512


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigError):
        load_codec_settings(str(tmp_path / "absent.json"))


@pytest.mark.parametrize("text", [
    "train:\n  batch_size: 0\n",
    "train:\n  preset: 40KB\n",
    "train:\n  smoothing_lambda: 1.5\n",
    "- not\n- a mapping\n",
    "train: [\n",
])
def test_invalid_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_codec_settings(str(path))


def test_apply_overrides_skips_none_and_validates():
    config = TrainConfig()
    assert apply_overrides(config, {"seed": None}) is config
    updated = apply_overrides(config, {"seed": 5, "fine_sampling": "uniform"})
    assert updated.seed == 5 and updated.fine_sampling == "uniform"
    with pytest.raises(ConfigError):
        apply_overrides(config, {"batch_size": -1})
