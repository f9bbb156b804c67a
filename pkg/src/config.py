"""
Codec Configuration
Model and training settings, their validation, JSON persistence and named profiles.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """
    Architecture of the hierarchical model

    N is the patch side, K the cluster count, C_f the feature width and C_d the
    width of every quantized latent.
    """
    N: int = 128
    K: int = 5
    C_f: int = 64
    C_d: int = 5
    levels: int = 3
    mixtures: int = 10
    quant_levels: int = 25
    sigma_q: float = 2.0
    res_blocks: int = 8
    seed: int = 0

    def validate(self):
        """Raise ConfigError if the config cannot build a model"""
        if self.levels not in (1, 2, 3):
            raise ConfigError(f"levels must be 1, 2 or 3, got {self.levels}")
        if self.N < 8 or self.N % 8 != 0:
            raise ConfigError(f"patch side N={self.N} must be a positive multiple of 8")
        if self.N % (2 ** self.levels) != 0:
            raise ConfigError(f"patch side N={self.N} not divisible by 2^{self.levels}")
        if self.K < 1:
            raise ConfigError(f"cluster count K must be >= 1, got {self.K}")
        if self.quant_levels < 2:
            raise ConfigError(f"quant_levels must be >= 2, got {self.quant_levels}")
        for name in ("C_f", "C_d", "mixtures"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks must be >= 0")
        if self.sigma_q <= 0:
            raise ConfigError("sigma_q must be positive")
        return self

    @property
    def uses_clustering(self):
        return self.levels >= 2

    def latent_side(self, level):
        """Spatial side of the level-n features, N / 2^n"""
        return self.N // (2 ** level)

    @property
    def shared_length(self):
        """Row length L of the shared latents"""
        return self.C_d * self.latent_side(self.levels) ** 2

    @property
    def head_flatten_length(self):
        """Input length of the cluster classifier's fully-connected layer"""
        side = self.latent_side(self.levels)
        # 5x5, stride 2, padding 2 convolution
        reduced = (side + 2 * 2 - 5) // 2 + 1
        return self.C_d * reduced * reduced

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data).validate()


@dataclass
class TrainConfig:
    """Optimizer, schedule and data handling for training"""
    epochs: int = 50
    learning_rate: float = 1e-4
    decay_every: int = 10
    decay_factor: float = 0.5
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    grad_clip: Optional[float] = None
    max_patches: Optional[int] = None
    batch_size: int = 1
    log_every: int = 1
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.decay_every < 1 or not 0 < self.decay_factor <= 1:
            raise ConfigError("decay schedule must have decay_every >= 1 and 0 < decay_factor <= 1")
        if self.batch_size != 1:
            raise ConfigError("training runs one image per step (batch_size=1)")
        if self.max_patches is not None and self.max_patches < 1:
            raise ConfigError("max_patches must be >= 1")
        return self

    def lr_at(self, epoch):
        """Learning rate for a zero-based epoch index"""
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data).validate()


def _from_dict(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"bad {cls.__name__}: {e}") from e


def full_profile(**overrides):
    """Full-scale settings: 128x128 patches, 64 feature channels, 10 mixtures"""
    return ModelConfig(**{**dict(N=128, K=5, C_f=64, C_d=5, mixtures=10, res_blocks=8), **overrides}).validate()


def desk_profile(**overrides):
    """Laptop-CPU settings; all pipeline mechanics are unchanged"""
    return ModelConfig(**{**dict(N=64, K=5, C_f=32, C_d=5, mixtures=5, res_blocks=8), **overrides}).validate()


def desk_train_profile(**overrides):
    return TrainConfig(**{**dict(epochs=10), **overrides}).validate()


def load_run_config(path):
    """
    Load a `{"model": {...}, "train": {...}}` JSON file

    Args:
        path (str): Config file

    Returns:
        tuple: (ModelConfig, TrainConfig)
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    model = ModelConfig.from_dict(raw.get("model", {}))
    train = TrainConfig.from_dict(raw.get("train", {}))
    logger.info(f"Loaded run config from {path}: N={model.N} K={model.K} levels={model.levels}")
    return model, train


def save_run_config(path, model, train):
    with open(path, "w") as f:
        json.dump({"model": model.to_dict(), "train": train.to_dict()}, f, indent=2)
