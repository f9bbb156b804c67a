#!/usr/bin/env python3
"""
Pytest tests for configuration, checkpoints and logging setup
"""

import json
import logging

import pytest
import numpy as np
import sys
import os

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.checkpoint import (checkpoint_fingerprint, deserialize_state, load_checkpoint, save_checkpoint,
                            serialize_state, sidecar_path)
from src.config import (ModelConfig, TrainConfig, desk_profile, full_profile, load_run_config,
                        save_run_config)
from src.exceptions import CheckpointError, ConfigError
from src.log_setup import JsonLineFormatter, setup_logging
from src.network import HierarchicalModel


def tiny_config(**overrides):
    return ModelConfig(**{**dict(N=8, K=2, C_f=4, C_d=2, levels=3, mixtures=2, res_blocks=1), **overrides})


class TestModelConfig:
    """Validation and derived sizes"""

    def test_defaults(self):
        config = ModelConfig().validate()
        assert config.latent_side(3) == 16
        assert config.shared_length == 5 * 16 * 16
        assert config.head_flatten_length == 320

    def test_profiles(self):
        assert full_profile().C_f == 64
        desk = desk_profile()
        assert (desk.N, desk.C_f, desk.mixtures) == (64, 32, 5)
        assert desk_profile(K=3).K == 3

    @pytest.mark.parametrize("overrides", [
        dict(levels=0), dict(N=12), dict(N=8, levels=4), dict(K=0), dict(quant_levels=1),
        dict(C_f=0), dict(res_blocks=-1), dict(sigma_q=0.0),
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            ModelConfig(**overrides).validate()

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"N": 64, "colour": "blue"})

    def test_dict_round_trip(self):
        config = tiny_config(seed=3)
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestTrainConfig:
    """Schedule and validation"""

    @pytest.mark.parametrize("overrides", [
        dict(epochs=0), dict(learning_rate=0.0), dict(decay_factor=1.5), dict(batch_size=4), dict(max_patches=0),
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides).validate()

    def test_run_config_file(self, tmp_path):
        path = str(tmp_path / "run.json")
        save_run_config(path, tiny_config(), TrainConfig(epochs=3))
        model, train = load_run_config(path)
        assert model == tiny_config()
        assert train.epochs == 3

    def test_missing_sections_use_defaults(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"model": {"N": 64}}))
        model, train = load_run_config(str(path))
        assert model.N == 64 and train == TrainConfig()

    def test_bad_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_run_config(str(path))


class TestCheckpoint:
    """GTNS tensor files and their sidecars"""

    def test_state_round_trip(self):
        state = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
        restored = deserialize_state(serialize_state(state))
        assert list(restored) == ["a.weight", "b"]
        for name in state:
            np.testing.assert_array_equal(restored[name], state[name])

    def test_model_round_trip(self, tmp_path):
        model = HierarchicalModel(tiny_config())
        path = str(tmp_path / "model.gtns")
        fingerprint = save_checkpoint(path, model.state_dict(), model.config, extra={"epoch": 4})
        state, config, loaded_fingerprint, sidecar = load_checkpoint(path)
        assert config == model.config
        assert loaded_fingerprint == fingerprint
        assert sidecar["epoch"] == 4
        restored = HierarchicalModel(config)
        restored.load_state_dict(state)
        for name, tensor in model.parameters().items():
            np.testing.assert_array_equal(restored.parameters()[name].data, tensor.data)

    def test_fingerprint_tracks_weights(self):
        state = {"w": np.zeros(3, dtype=np.float32)}
        changed = {"w": np.array([0, 0, 1e-6], dtype=np.float32)}
        config = tiny_config()
        assert (checkpoint_fingerprint(serialize_state(state), config)
                != checkpoint_fingerprint(serialize_state(changed), config))

    @pytest.mark.parametrize("field, value", [("quant_levels", 17), ("mixtures", 3), ("K", 5), ("sigma_q", 1.5)])
    def test_fingerprint_tracks_config(self, field, value):
        """Same weight bytes under a different config must not share a fingerprint"""
        payload = serialize_state({"w": np.ones(3, dtype=np.float32)})
        assert checkpoint_fingerprint(payload, tiny_config()) != checkpoint_fingerprint(payload, tiny_config(**{field: value}))

    def test_sidecar_edit_changes_loaded_fingerprint(self, tmp_path):
        model = HierarchicalModel(tiny_config())
        path = str(tmp_path / "model.gtns")
        fingerprint = save_checkpoint(path, model.state_dict(), model.config)
        with open(sidecar_path(path)) as f:
            sidecar = json.load(f)
        sidecar["config"]["quant_levels"] = 17
        with open(sidecar_path(path), "w") as f:
            json.dump(sidecar, f)
        assert load_checkpoint(path)[2] != fingerprint

    @pytest.mark.parametrize("payload", [b"", b"XXXX" + bytes(12), b"GTNS" + bytes(3)])
    def test_malformed_payload(self, payload):
        with pytest.raises(CheckpointError):
            deserialize_state(payload)

    def test_truncated_tensor(self):
        payload = serialize_state({"w": np.ones((4, 4), dtype=np.float32)})
        with pytest.raises(CheckpointError):
            deserialize_state(payload[:-8])

    def test_trailing_bytes(self):
        payload = serialize_state({"w": np.ones(2, dtype=np.float32)})
        with pytest.raises(CheckpointError):
            deserialize_state(payload + b"\x00")

    def test_missing_sidecar(self, tmp_path):
        path = str(tmp_path / "model.gtns")
        save_checkpoint(path, {"w": np.ones(1, dtype=np.float32)}, tiny_config())
        os.remove(sidecar_path(path))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_load_state_mismatch(self):
        model = HierarchicalModel(tiny_config())
        with pytest.raises(CheckpointError):
            model.load_state_dict({"nope": np.zeros(1)})

    def test_load_state_shape_mismatch_copies_nothing(self):
        model = HierarchicalModel(tiny_config())
        before = {name: tensor.data.copy() for name, tensor in model.parameters().items()}
        state = {name: np.ones_like(value) for name, value in before.items()}
        name = sorted(state)[-1]
        state[name] = np.ones(state[name].size + 1, dtype=np.float32)
        with pytest.raises(CheckpointError):
            model.load_state_dict(state)
        for key, tensor in model.parameters().items():
            np.testing.assert_array_equal(tensor.data, before[key])

    def test_weights_for_another_config(self):
        """A checkpoint saved with 2 mixtures does not fit a 3-mixture model"""
        state = HierarchicalModel(tiny_config()).state_dict()
        with pytest.raises(CheckpointError):
            HierarchicalModel(tiny_config(mixtures=3)).load_state_dict(state)


class TestLogging:
    """JSON-lines logging"""

    def test_json_line_carries_extra_fields(self):
        record = logging.LogRecord("src.trainer", logging.INFO, __file__, 1, "train_step", None, None)
        record.epoch = 2
        record.loss = 3.5
        payload = json.loads(JsonLineFormatter().format(record))
        assert payload["msg"] == "train_step"
        assert payload["level"] == "INFO"
        assert payload["epoch"] == 2 and payload["loss"] == 3.5

    def test_level_from_environment(self, monkeypatch):
        monkeypatch.setenv("GLC_LOG_LEVEL", "WARNING")
        root = setup_logging()
        assert root.level == logging.WARNING

    def test_log_file(self, tmp_path):
        path = str(tmp_path / "run.log")
        setup_logging(level="INFO", log_file=path)
        logging.getLogger("src.test").info("hello")
        for handler in logging.getLogger().handlers:
            handler.flush()
        with open(path) as f:
            assert json.loads(f.readline())["msg"] == "hello"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
