"""Shared model plumbing: batches, traces, parameter handling and checkpoints."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data import LabSequence, MaskedVector, average_sequence
from ..numcore import Mlp, Tensor, load_arrays, save_arrays
from ..numcore import autodiff as ad
from ..numcore.layers import softmax
from ..problayer import cross_entropy_rows


class ArchitectureMismatch(ValueError):
    """A checkpoint or datum does not fit the requested architecture."""


@dataclass
class StaticBatch:
    x: np.ndarray       # (B, M), zero at masked entries
    mask: np.ndarray    # (B, M) bool
    labels: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SeqBatch:
    x: np.ndarray        # (B, T, M), zero at masked entries and padded days
    mask: np.ndarray     # (B, T, M) bool
    steps: np.ndarray    # (B, T) bool, False on padding
    labels: np.ndarray   # (B,)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def lengths(self) -> np.ndarray:
        return self.steps.sum(axis=1)


def static_batch(items: Sequence, labels: Sequence[int] | None = None) -> StaticBatch:
    """Batch from sequences (averaged here) or pre-averaged masked vectors."""
    vecs = [average_sequence(it) if isinstance(it, LabSequence) else it for it in items]
    if labels is None:
        labels = [it.label for it in items]
    mask = np.array([v.mask for v in vecs], dtype=bool)
    x = np.where(mask, np.array([v.values for v in vecs], dtype=np.float64), 0.0)
    return StaticBatch(x, mask, np.asarray(labels, dtype=np.int64))


def seq_batch(seqs: Sequence[LabSequence]) -> SeqBatch:
    """Right-pad to the longest sequence with fully masked days."""
    B, M = len(seqs), seqs[0].M
    T = max(s.T for s in seqs)
    x = np.zeros((B, T, M))
    mask = np.zeros((B, T, M), dtype=bool)
    steps = np.zeros((B, T), dtype=bool)
    for i, s in enumerate(seqs):
        if s.M != M:
            raise ArchitectureMismatch(f"episode {s.episode_id} has {s.M} tests, expected {M}")
        x[i, :s.T] = np.where(s.mask, s.values, 0.0)
        mask[i, :s.T] = s.mask
        steps[i, :s.T] = True
    return SeqBatch(x, mask, steps, np.array([s.label for s in seqs], dtype=np.int64))


@dataclass
class ForwardTrace:
    logits: Tensor
    pooled: Tensor
    priors: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)
    decoders: list = field(default_factory=list)
    latents: list = field(default_factory=list)
    hidden: list = field(default_factory=list)
    recon: Tensor | None = None

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits.data)


@dataclass
class LossParts:
    total: Tensor
    disc: float  # mean cross-entropy
    gen: float   # mean generative loss (negative ELBO or masked SSE)


def gaussian_mlp(n_in: int, n_hidden: int, dim: int, rng: np.random.Generator, name: str) -> Mlp:
    """MLP emitting ``(mu, log sigma)`` of width ``2*dim``.

    The log-sigma rows of the output layer start at zero so every head
    begins at unit scale; Glorot-sized rows there put log sigma at the clamp
    from the first step and the sampled latents blow up.
    """
    mlp = Mlp(n_in, n_hidden, 2 * dim, rng, name)
    mlp.out.W.data[dim:] = 0.0
    return mlp


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Model:
    """Base class; subclasses register layers in ``self.layers`` in a fixed order."""

    arch = "base"
    sequential = False

    def __init__(self, n_inputs: int, n_classes: int, hidden_dim: int = 64, latent_dim: int = 32,
                 seed: int = 0):
        self.n_inputs = n_inputs
        self.n_classes = n_classes
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.layers: list = []

    @property
    def dims(self) -> dict:
        return {"n_inputs": self.n_inputs, "n_classes": self.n_classes,
                "hidden_dim": self.hidden_dim, "latent_dim": self.latent_dim}

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.layers:
            out.update(layer.parameters())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise ArchitectureMismatch(f"{self.arch}: parameter names do not match checkpoint")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ArchitectureMismatch(f"{self.arch}: {k} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # subclasses override -------------------------------------------------
    def make_batch(self, items: Sequence):
        return seq_batch(items) if self.sequential else static_batch(items)

    def forward(self, batch, rng: np.random.Generator | None = None) -> ForwardTrace:
        """``rng=None`` means evaluation mode: posterior means replace samples."""
        raise NotImplementedError

    def generative_rows(self, trace: ForwardTrace, batch) -> Tensor | None:
        """Per-datum generative loss to be minimised, or None for purely discriminative models."""
        return None

    # shared --------------------------------------------------------------
    def objective(self, trace: ForwardTrace, batch, eta: float = 0.5, disc_weight: float = 1.0) -> LossParts:
        """Batch mean of ``disc_weight * CE + eta * generative``."""
        ce = ad.mean(cross_entropy_rows(trace.logits, batch.labels))
        gen = self.generative_rows(trace, batch)
        total = ad.mul(ce, disc_weight)
        gen_value = 0.0
        if gen is not None:
            g = ad.mean(gen)
            gen_value = float(g.data)
            if eta != 0.0:
                total = ad.add(total, ad.mul(g, eta))
        return LossParts(total, float(ce.data), gen_value)

    def loss(self, batch, rng=None, eta: float = 0.5, disc_weight: float = 1.0) -> LossParts:
        return self.objective(self.forward(batch, rng), batch, eta, disc_weight)

    def predict_proba(self, batch) -> np.ndarray:
        with ad.no_grad():
            return self.forward(batch, None).probs

    def features(self, batch) -> np.ndarray:
        with ad.no_grad():
            return self.forward(batch, None).pooled.data.copy()


def save_model(model: Model, path, meta: dict | None = None, extra_groups: dict | None = None) -> None:
    info = {"arch": model.arch, "dims": model.dims, "seed": model.seed}
    info.update(meta or {})
    groups = {"param": model.state()}
    groups.update(extra_groups or {})
    save_arrays(path, groups, info)


def load_checkpoint(path, expected_arch: str | None = None):
    """Return ``(model, groups, meta)``; refuses a mismatched architecture."""
    from . import build_model

    groups, meta = load_arrays(path)
    arch = meta.get("arch")
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureMismatch(f"checkpoint holds {arch!r}, expected {expected_arch!r}")
    d = meta["dims"]
    model = build_model(arch, d["n_inputs"], d["n_classes"], d["hidden_dim"], d["latent_dim"],
                        seed=meta.get("seed", 0))
    model.load_state(groups.get("best", groups["param"]))
    return model, groups, meta


def wrap_features(features: np.ndarray, labels: Sequence[int]) -> list[LabSequence]:
    """Present frozen feature vectors as single-day, fully observed sequences."""
    return [LabSequence(f[None, :], np.ones((1, len(f)), dtype=bool), int(y), f"feat{i}")
            for i, (f, y) in enumerate(zip(features, labels))]


def as_masked_vector(values, mask=None) -> MaskedVector:
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return MaskedVector(np.where(mask, values, 0.0), mask)
