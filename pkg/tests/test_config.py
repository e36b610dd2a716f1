"""
Unit tests for configuration management.
"""

import json
import logging

import pytest

from gold_ocl.config import (
    GoldConfig,
    get_config,
    load_config_from_file,
    set_config,
)
from gold_ocl.exceptions import InvalidArgumentError


@pytest.mark.unit
class TestGoldConfig:
    """Test cases for the main configuration."""

    def test_defaults_are_valid(self):
        config = GoldConfig()
        assert config.dsa.num_slots == 7
        assert config.codec.grid_shape == (8, 8)
        assert config.train.loss_weights(1) == (1.0, 0.0)
        assert config.train.loss_weights(2) == (0.0, 1.0)

    def test_sectioned_and_flat_keys(self):
        config = GoldConfig.from_dict({"dsa": {"num_slots": 5}, "tau_end": 0.2, "patch_size": 4})
        assert config.dsa.num_slots == 5
        assert config.train.tau_end == 0.2
        assert config.codec.patch_size == 4

    def test_ambiguous_flat_key(self):
        with pytest.raises(InvalidArgumentError, match="Ambiguous"):
            GoldConfig.from_dict({"batch_size": 4})

    def test_unknown_keys(self):
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"learning_rate": 0.1})
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"train": {"learning_rate": 0.1}})

    def test_section_validation(self):
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"train": {"variant": "other"}})
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"train": {"tau_end": 0.0}})
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"eval": {"iou_threshold": 2.0}})
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"logging": {"level": "LOUD"}})

    def test_canvas_must_match_codec(self):
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_dict({"scene": {"canvas_size": 32}})

    def test_more_objects_than_slots_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="gold_ocl"):
            GoldConfig.from_dict({"scene": {"max_objects": 9}})
        assert "object slots" in caplog.text

    def test_overrides(self, tiny_config):
        config = tiny_config.apply_overrides(["dsa.iterations=5", "eta=0.5", "variant=no_glo"])
        assert config.dsa.iterations == 5
        assert config.train.eta == 0.5
        assert config.train.variant == "no_glo"
        assert tiny_config.dsa.iterations == 2

    def test_bad_overrides(self, tiny_config):
        with pytest.raises(InvalidArgumentError):
            tiny_config.apply_overrides(["iterations"])
        with pytest.raises(InvalidArgumentError):
            tiny_config.apply_overrides(["nowhere.iterations=3"])

    def test_hash_ignores_runtime_settings(self, tiny_config):
        changed = tiny_config.apply_overrides(["logging.level=DEBUG", "eval.runs=7", "device=cuda"])
        assert changed.config_hash() == tiny_config.config_hash()
        assert tiny_config.apply_overrides(["eta=0.2"]).config_hash() != tiny_config.config_hash()

    def test_file_round_trip(self, tmp_path, tiny_config):
        path = tmp_path / "nested" / "config.json"
        tiny_config.save_to_file(path)
        assert GoldConfig.from_file(path) == tiny_config

    def test_missing_and_invalid_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            GoldConfig.from_file(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{oops", encoding="utf-8")
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_file(bad)
        listing = tmp_path / "list.json"
        listing.write_text(json.dumps([1, 2]), encoding="utf-8")
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_file(listing)

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("GOLD_LOG_LEVEL", "debug")
        monkeypatch.setenv("GOLD_SEED", "11")
        config = GoldConfig.from_env()
        assert config.logging.level == "DEBUG"
        assert config.train.seed == 11

    def test_from_env_rejects_bad_level(self, monkeypatch):
        monkeypatch.setenv("GOLD_LOG_LEVEL", "chatty")
        with pytest.raises(InvalidArgumentError):
            GoldConfig.from_env()

    def test_setup_logging(self, tmp_path, tiny_config):
        log_file = tmp_path / "logs" / "gold.log"
        config = tiny_config.apply_overrides(["log_to_file=true", f"log_file={log_file}", "level=DEBUG"])
        config.setup_logging()
        logger = logging.getLogger("gold_ocl")
        assert logger.level == logging.DEBUG
        assert len(logger.handlers) == 2
        for handler in logger.handlers:
            handler.close()
        logger.handlers.clear()
        logger.setLevel(logging.NOTSET)


@pytest.mark.unit
class TestGlobalConfig:
    """Test cases for the global configuration instance."""

    def test_set_and_get(self, tiny_config):
        set_config(tiny_config)
        assert get_config() is tiny_config

    def test_load_from_file(self, tmp_path, tiny_config):
        path = tmp_path / "config.json"
        tiny_config.save_to_file(path)
        assert load_config_from_file(path) == get_config()
