# config.py

"""
Model and training configuration.

Defaults follow the published setting (256-d features, rank 16, head
[256, 64, 3], Adam at 1e-5, 20 epochs, batch size 1). The `synthetic`
presets shrink the model so the toy encoders train in minutes on a CPU.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from .models import ConfigError, ModalityMask


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture sizes.

    Attributes:
        vocab_size: Text embedding rows (id 0 is the unknown word)
        text_embed_dim: Text embedding width
        audio_dim: Audio per-frame feature width
        video_dim: Video per-frame feature width
        hidden_dim: Recurrent state width of the toy encoders
        feature_dim: Modal feature width d_k
        fusion_dim: Fused feature width d_h
        rank: Low-rank components r
        head_sizes: Fusion prediction head sizes
        unimodal_head_sizes: Stage-1 head sizes
        n_video_frames: Frames per video input (n)
    """
    vocab_size: int
    text_embed_dim: int = 32
    audio_dim: int = 16
    video_dim: int = 16
    hidden_dim: int = 64
    feature_dim: int = 256
    fusion_dim: int = 256
    rank: int = 16
    head_sizes: Tuple[int, ...] = (256, 64, 3)
    unimodal_head_sizes: Tuple[int, ...] = (256, 64, 3)
    n_video_frames: int = 16

    def __post_init__(self):
        object.__setattr__(self, "head_sizes", tuple(int(s) for s in self.head_sizes))
        object.__setattr__(self, "unimodal_head_sizes", tuple(int(s) for s in self.unimodal_head_sizes))
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.head_sizes[0] != self.fusion_dim or self.head_sizes[-1] != 3:
            raise ConfigError(f"Fusion head {self.head_sizes} must run from {self.fusion_dim} to 3")
        if self.unimodal_head_sizes[0] != self.feature_dim or self.unimodal_head_sizes[-1] != 3:
            raise ConfigError(f"Uni-modal head {self.unimodal_head_sizes} must run from "
                              f"{self.feature_dim} to 3")
        for name in ("vocab_size", "text_embed_dim", "audio_dim", "video_dim", "hidden_dim",
                     "feature_dim", "fusion_dim", "n_video_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def full(cls, vocab_size: int, audio_dim: int, video_dim: int, **overrides) -> "ModelConfig":
        return cls(vocab_size=vocab_size, audio_dim=audio_dim, video_dim=video_dim, **overrides)

    @classmethod
    def synthetic(cls, vocab_size: int, audio_dim: int = 16, video_dim: int = 16,
                  **overrides) -> "ModelConfig":
        width = overrides.pop("width", 32)
        settings = dict(text_embed_dim=16, hidden_dim=32, feature_dim=width, fusion_dim=width, rank=4,
                        head_sizes=(width, 16, 3), unimodal_head_sizes=(width, 16, 3))
        settings.update(overrides)
        return cls(vocab_size=vocab_size, audio_dim=audio_dim, video_dim=video_dim, **settings)

    def with_rank(self, rank: int) -> "ModelConfig":
        return replace(self, rank=rank)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["head_sizes"] = list(self.head_sizes)
        out["unimodal_head_sizes"] = list(self.unimodal_head_sizes)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items() if k in known})


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimisation settings for both training stages.

    Attributes:
        learning_rate: Adam step size
        epochs: Passes over the training samples
        batch_size: Samples whose gradients are averaged per update
        dropout_p: Random modality dropout probability
        seed: Seed for initialisation-independent randomness (shuffle, dropout)
        modalities: Modalities used by joint training
        train_encoders: Update encoders during joint training
        train_factors: Update fusion factors during joint training
        from_scratch: Allow joint training without stage-1 encoders
        beta1, beta2, epsilon: Adam hyperparameters
    """
    learning_rate: float = 1e-5
    epochs: int = 20
    batch_size: int = 1
    dropout_p: float = 0.1
    seed: int = 0
    modalities: ModalityMask = field(default_factory=ModalityMask.full)
    train_encoders: bool = True
    train_factors: bool = True
    from_scratch: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"Dropout probability must lie in [0, 1), got {self.dropout_p}")
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"Epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"Learning rate must be positive, got {self.learning_rate}")
        if self.modalities.is_empty:
            raise ConfigError("Training needs at least one modality")

    @classmethod
    def synthetic(cls, **overrides) -> "TrainConfig":
        settings = dict(learning_rate=1e-3, epochs=4)
        settings.update(overrides)
        return cls(**settings)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["modalities"] = self.modalities.code
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in data.items() if k in known}
        if "modalities" in values:
            values["modalities"] = ModalityMask.parse(values["modalities"])
        return cls(**values)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """
    Read a flat JSON object of scalar overrides.

    Raises:
        ConfigError: If the file is not a flat JSON object
    """
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError(f"Config file {path} must be flat; nested keys: {nested}")
    return data
