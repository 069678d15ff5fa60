"""Mini-batch Adam training with dev-set early stopping, plus evaluation helpers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import LabSequence
from .metrics import MetricsReport, PredictionSet, evaluate_predictions
from .models import Model, build_model, save_model, wrap_features
from .numcore import AdamState, NonFiniteError, adam_step, clip_global_norm, load_arrays
from .numcore import autodiff as ad

log = logging.getLogger(__name__)


class TrainingDiverged(NonFiniteError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"non-finite loss or gradient at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainState:
    adam: AdamState
    epoch: int = 0               # epochs completed
    best_score: float = -np.inf  # higher is better
    best_epoch: int = -1
    best_params: dict = field(default_factory=dict)
    bad_epochs: int = 0
    history: list = field(default_factory=list)
    stopped: bool = False


BUCKET_BATCHES = 20


def _batches(n: int, batch_size: int, rng: np.random.Generator, lengths=None) -> list[np.ndarray]:
    """Shuffled mini-batches; with ``lengths``, similar lengths share a batch.

    Bucketing sorts each window of ``BUCKET_BATCHES`` batches by length before
    cutting, then shuffles the batch order, so padding stays small.
    """
    order = rng.permutation(n)
    if lengths is not None:
        window = batch_size * BUCKET_BATCHES
        lengths = np.asarray(lengths)
        order = np.concatenate([w[np.argsort(lengths[w], kind="stable")]
                                for w in np.split(order, range(window, n, window))])
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if lengths is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _eval_map(model: Model, fn, seqs: Sequence[LabSequence], batch_size: int) -> np.ndarray:
    """Apply ``fn`` batch-wise, grouping by length for sequence models; rows keep input order."""
    order = np.argsort([s.T for s in seqs], kind="stable") if model.sequential else np.arange(len(seqs))
    out = np.concatenate([fn(model.make_batch([seqs[j] for j in order[i:i + batch_size]]))
                          for i in range(0, len(seqs), batch_size)], axis=0)
    result = np.empty_like(out)
    result[order] = out
    return result


def predict(model: Model, seqs: Sequence[LabSequence], batch_size: int = 256) -> np.ndarray:
    return _eval_map(model, model.predict_proba, seqs, batch_size)


def evaluate(model: Model, seqs: Sequence[LabSequence]) -> MetricsReport:
    probs = predict(model, seqs)
    return evaluate_predictions(PredictionSet(probs, [s.label for s in seqs]))


def generative_loss(model: Model, seqs: Sequence[LabSequence], batch_size: int = 256) -> float:
    """Mean generative loss in evaluation mode (posterior means)."""
    total = 0.0
    with ad.no_grad():
        for i in range(0, len(seqs), batch_size):
            batch = model.make_batch(list(seqs[i:i + batch_size]))
            parts = model.loss(batch, None, eta=1.0, disc_weight=0.0)
            total += parts.gen * len(batch)
    return total / len(seqs)


def features(model: Model, seqs: Sequence[LabSequence], batch_size: int = 256) -> np.ndarray:
    return _eval_map(model, model.features, seqs, batch_size)


def train_epoch(model: Model, train: Sequence[LabSequence], cfg: RunConfig, state: TrainState) -> dict:
    epoch = state.epoch
    state.adam.epoch = epoch
    params = model.parameters()
    arrays = {k: p.data for k, p in params.items()}
    lengths = [s.T for s in train] if model.sequential else None
    batches = _batches(len(train), cfg.batch_size, np.random.default_rng([cfg.seed, epoch]), lengths)
    sums = {"loss": 0.0, "ld": 0.0, "lg": 0.0}
    clipped, max_norm = 0, 0.0
    for b, idx in enumerate(batches):
        batch = model.make_batch([train[i] for i in idx])
        noise = np.random.default_rng([cfg.seed, epoch, b])
        model.zero_grad()
        try:
            parts = model.loss(batch, noise, cfg.eta, cfg.disc_weight)
            parts.total.backward()
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch, b, str(exc)) from None
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
        for k, g in grads.items():
            if not np.isfinite(g).all():
                raise TrainingDiverged(epoch, b, f"gradient of {k}")
        norm, was_clipped = clip_global_norm(grads, cfg.clip_norm)
        clipped += was_clipped
        max_norm = max(max_norm, norm)
        adam_step(state.adam, arrays, grads)
        w = len(idx)
        sums["loss"] += float(parts.total.data) * w
        sums["ld"] += parts.disc * w
        sums["lg"] += parts.gen * w
    n = len(train)
    return {"epoch": epoch, "lr": state.adam.effective_lr, "loss": sums["loss"] / n,
            "ld": sums["ld"] / n, "lg": sums["lg"] / n, "clipped_batches": clipped,
            "max_grad_norm": max_norm}


def train_model(model: Model, train: Sequence[LabSequence], dev: Sequence[LabSequence], cfg: RunConfig,
                state: TrainState | None = None, on_epoch=None) -> TrainState:
    """Train until ``cfg.max_epochs`` or early stopping; leaves the best parameters loaded.

    Supervised runs select on dev macro-F1.  With ``disc_weight == 0`` the
    classifier is untrained, so selection uses the dev generative loss.
    """
    if state is None:
        state = TrainState(AdamState(lr=cfg.lr, lr_decay=cfg.lr_decay))
    supervised = cfg.disc_weight > 0
    while state.epoch < cfg.max_epochs and not state.stopped:
        rec = train_epoch(model, train, cfg, state)
        if supervised:
            report = evaluate(model, dev)
            rec["dev"] = report.scores()
            score = report.macro_f1
        else:
            rec["dev_lg"] = generative_loss(model, dev)
            score = -rec["dev_lg"]
        if score > state.best_score:
            state.best_score, state.best_epoch, state.bad_epochs = score, state.epoch, 0
            state.best_params = model.state()
        else:
            state.bad_epochs += 1
        if rec["clipped_batches"]:
            log.debug("epoch %d: clipped %d batches (max norm %.3g)", state.epoch,
                      rec["clipped_batches"], rec["max_grad_norm"])
        state.history.append(rec)
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(rec, state)
        if state.bad_epochs >= cfg.patience:
            state.stopped = True
    return state


def restore_best(model: Model, state: TrainState) -> None:
    if state.best_params:
        model.load_state(state.best_params)


def fit(cfg: RunConfig, train: Sequence[LabSequence], dev: Sequence[LabSequence],
        n_inputs: int | None = None, n_classes: int | None = None) -> tuple[Model, TrainState]:
    """Build the configured model, train it, and load its best parameters."""
    n_inputs = n_inputs or train[0].M
    n_classes = n_classes or 1 + max(s.label for s in [*train, *dev])
    model = build_model(cfg.model, n_inputs, n_classes, cfg.hidden_dim, cfg.latent_dim, cfg.seed)
    state = train_model(model, train, dev, cfg)
    restore_best(model, state)
    return model, state


# ---------------------------------------------------------------------------
# checkpoints carrying the full training state


def save_training_checkpoint(path, model: Model, state: TrainState, cfg: RunConfig, extra_meta: dict | None = None):
    """Current and best parameters, Adam moments and bookkeeping."""
    current = model.state()
    meta = {
        "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.seed,
        "epoch": state.epoch, "adam_step": state.adam.step, "best_score": state.best_score,
        "best_epoch": state.best_epoch, "bad_epochs": state.bad_epochs, "stopped": state.stopped,
        "history": state.history,
    }
    meta.update(extra_meta or {})
    groups = {"best": state.best_params or current,
              "adam_m": state.adam.m, "adam_v": state.adam.v}
    save_model(model, path, meta, groups)


def load_training_state(path, model: Model, cfg: RunConfig) -> TrainState:
    """Restore a run so that continuing it reproduces the uninterrupted trajectory."""
    groups, meta = load_arrays(path)
    model.load_state(groups["param"])
    adam = AdamState(lr=cfg.lr, lr_decay=cfg.lr_decay, step=int(meta["adam_step"]),
                     m=dict(groups.get("adam_m", {})), v=dict(groups.get("adam_v", {})))
    return TrainState(adam, epoch=int(meta["epoch"]), best_score=float(meta["best_score"]),
                      best_epoch=int(meta["best_epoch"]), best_params=dict(groups["best"]),
                      bad_epochs=int(meta["bad_epochs"]), history=list(meta["history"]),
                      stopped=bool(meta["stopped"]))


def feature_transfer(model: Model, train, dev, test, cfg: RunConfig) -> tuple[MetricsReport, Model]:
    """Freeze ``model``'s features, fit a fresh NN head on them and score it on ``test``."""
    wrapped = [wrap_features(features(model, part), [s.label for s in part]) for part in (train, dev, test)]
    head_cfg = replace(cfg, model="nn", eta=0.0, disc_weight=1.0)
    head, _ = fit(head_cfg, wrapped[0], wrapped[1], n_classes=model.n_classes)
    return evaluate(head, wrapped[2]), head
