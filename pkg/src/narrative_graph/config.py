"""Flat training/model configuration shared by the model, trainer and CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping

from .errors import ParameterError

MODALITIES = ("text_only", "audiovisual", "audio_only", "visual_only")
MODALITY_ALIASES = {"text": "text_only", "av": "audiovisual", "audio": "audio_only", "visual": "visual_only"}


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.1
    max_neighbors: int = 6
    window: int = 3
    lam: float = 10.0
    sigma_prior: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 50
    dropout: float = 0.2
    seed: int = 0
    modality: str = "text_only"
    hidden: int = 64
    d_proj: int = 16
    d_fused: int = 32
    d_sim: int = 64
    d_gcn: int = 64
    size_input: int = 256
    size_hidden: int = 32
    normalize_av: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    keep_best: bool = True

    def __post_init__(self):
        modality = MODALITY_ALIASES.get(self.modality, self.modality)
        object.__setattr__(self, "modality", modality)
        if modality not in MODALITIES:
            raise ParameterError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")
        for name in ("tau", "sigma_prior", "learning_rate", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("max_neighbors", "window", "hidden", "d_proj", "d_fused", "d_sim", "d_gcn",
                     "size_input", "size_hidden"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lam < 0 or self.epochs < 0 or not 0 <= self.dropout < 1:
            raise ParameterError("lam and epochs must be >= 0 and dropout in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "TrainConfig":
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)
