from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .models import ARCHITECTURES, config_hash

# MIMIC-III reference numbers (50 classes, 50 tests); not reproducible here
REFERENCE_RESULTS = {
    "diagnosis_micro_f1": {"vrnn_nn": "0.426 ± 0.002", "rnn_nn": "0.395 ± 0.004", "nn": "0.376 ± 0.004",
                           "ae_nn": "0.366 ± 0.004", "vae_nn": "0.374 ± 0.003"},
    "imputation_mse": {"zero": "0.909 ± 0.112", "last&next": "0.434 ± 0.110", "row mean": "0.541 ± 0.114",
                       "NOCB": "0.547 ± 0.112", "model": "0.370 ± 0.110"},
}

PROTOCOL_NOTE = ("protocol: early stopping on dev macro-F1 (patience {patience}, max {max_epochs} epochs), "
                 "batch {batch_size}; epoch budget and stopping rule are choices of this tool, so "
                 "comparisons with published numbers carry a protocol caveat")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "vrnn_nn"
    hidden_dim: int = 64
    latent_dim: int = 32
    eta: float = 0.5
    disc_weight: float = 1.0
    lr: float = 0.0005
    lr_decay: float = 0.99
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    split_seed: int = 0
    split_seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    data: str = ""

    def validate(self) -> "RunConfig":
        if self.model not in ARCHITECTURES:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(ARCHITECTURES)}")
        if self.eta < 0 or self.disc_weight < 0:
            raise ConfigError("eta and disc_weight must be non-negative")
        if self.hidden_dim < 1 or self.latent_dim < 1 or self.batch_size < 1:
            raise ConfigError("dimensions and batch size must be positive")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("lr must be positive and lr_decay in (0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def protocol_note(self) -> str:
        return PROTOCOL_NOTE.format(**self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data
