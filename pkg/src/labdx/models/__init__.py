"""The five architectures and thin functional entry points over them."""
from __future__ import annotations

import numpy as np

from ..data import LabSequence, MaskedVector
from ..numcore import Tensor
from .base import (ArchitectureMismatch, ForwardTrace, LossParts, Model, SeqBatch, StaticBatch,
                   config_hash, load_checkpoint, save_model, seq_batch, static_batch, wrap_features)
from .recurrent import RnnNN, VrnnNN, VrnnStep
from .static import NN, AeNN, VaeNN

ARCHITECTURES: dict[str, type[Model]] = {cls.arch: cls for cls in (NN, AeNN, VaeNN, RnnNN, VrnnNN)}


def build_model(arch: str, n_inputs: int, n_classes: int, hidden_dim: int = 64,
                latent_dim: int = 32, seed: int = 0) -> Model:
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ArchitectureMismatch(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(n_inputs, n_classes, hidden_dim, latent_dim, seed)


def _require(model: Model, cls: type) -> None:
    if not isinstance(model, cls):
        raise ArchitectureMismatch(f"expected {cls.arch}, got {model.arch}")


def _static(v) -> StaticBatch:
    if isinstance(v, StaticBatch):
        return v
    items = v if isinstance(v, list) else [v]
    if items and isinstance(items[0], MaskedVector):
        return static_batch(items, labels=[0] * len(items))
    return static_batch(items)


def _seq(seq) -> SeqBatch:
    if isinstance(seq, SeqBatch):
        return seq
    return seq_batch(seq if isinstance(seq, list) else [seq])


def nn_forward(model: NN, v) -> np.ndarray:
    _require(model, NN)
    return model.predict_proba(_static(v))


def ae_forward(model: AeNN, v):
    """Return ``(z, reconstruction, class probabilities)``."""
    _require(model, AeNN)
    tr = model.forward(_static(v))
    return tr.pooled.data, tr.recon.data, tr.probs


def ae_loss(model: AeNN, batch: StaticBatch, eta: float = 0.5) -> LossParts:
    _require(model, AeNN)
    return model.loss(batch, None, eta)


def vae_forward(model: VaeNN, v, rng: np.random.Generator | None = None) -> ForwardTrace:
    _require(model, VaeNN)
    return model.forward(_static(v), rng)


def vae_loss(model: VaeNN, trace: ForwardTrace, batch: StaticBatch, eta: float = 0.5) -> LossParts:
    _require(model, VaeNN)
    return model.objective(trace, batch, eta)


def rnn_forward(model: RnnNN, seq) -> ForwardTrace:
    _require(model, RnnNN)
    return model.forward(_seq(seq))


def vrnn_step(model: VrnnNN, x_t, mask_t, h_prev, c_prev, rng=None) -> VrnnStep:
    _require(model, VrnnNN)
    wrap = lambda a: a if isinstance(a, Tensor) else Tensor(np.atleast_2d(a))
    return model.step(np.atleast_2d(x_t), np.atleast_2d(mask_t), wrap(h_prev), wrap(c_prev), rng)


def vrnn_loss(model: VrnnNN, trace: ForwardTrace, batch: SeqBatch, eta: float = 0.5) -> LossParts:
    _require(model, VrnnNN)
    return model.objective(trace, batch, eta)


def extract_features(model: Model, data) -> np.ndarray:
    """Deterministic representation: posterior mean / code for static models, mean hidden state for sequences."""
    if isinstance(data, (StaticBatch, SeqBatch)):
        return model.features(data)
    items = data if isinstance(data, list) else [data]
    if items and isinstance(items[0], LabSequence):
        return model.features(model.make_batch(items))
    return model.features(_static(items))


__all__ = [
    "ARCHITECTURES", "AeNN", "ArchitectureMismatch", "ForwardTrace", "LossParts", "Model", "NN",
    "RnnNN", "SeqBatch", "StaticBatch", "VaeNN", "VrnnNN", "ae_forward", "ae_loss", "build_model",
    "config_hash", "extract_features", "load_checkpoint", "nn_forward", "rnn_forward", "save_model",
    "seq_batch", "static_batch", "vae_forward", "vae_loss", "vrnn_loss", "vrnn_step", "wrap_features",
]
