"""Heuristic and model-based imputation plus the drop-and-score benchmark.

Every method maps a normalised :class:`LabSequence` to a copy whose missing
entries are filled; observed entries pass through untouched and the mask
is kept so callers still know what was measured.  Tests that are never
observed in an episode fall back to 0, the normalised mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import LabSequence
from .metrics import paired_t_test
from .models import VrnnNN


def _fill_columns(seq: LabSequence, fill: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> LabSequence:
    values = np.where(seq.mask, seq.values, 0.0)
    for m in range(seq.M):
        obs = seq.mask[:, m]
        if obs.all() or not obs.any():
            continue
        values[:, m] = np.where(obs, values[:, m], fill(values[:, m], obs))
    return seq.replace(values=values)


def impute_zero(seq: LabSequence) -> LabSequence:
    return seq.replace(values=np.where(seq.mask, seq.values, 0.0))


def _neighbours(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the last observed entry at or before t, and the next at or after t (-1 if none)."""
    T = len(obs)
    idx = np.arange(T)
    last = np.maximum.accumulate(np.where(obs, idx, -1))
    nxt = np.minimum.accumulate(np.where(obs, idx, T)[::-1])[::-1]
    return last, np.where(nxt == T, -1, nxt)


def _last_next(col: np.ndarray, obs: np.ndarray) -> np.ndarray:
    last, nxt = _neighbours(obs)
    lv = np.where(last >= 0, col[np.maximum(last, 0)], np.nan)
    nv = np.where(nxt >= 0, col[np.maximum(nxt, 0)], np.nan)
    both = (last >= 0) & (nxt >= 0)
    return np.where(both, 0.5 * (lv + nv), np.where(last >= 0, lv, nv))


def impute_last_next(seq: LabSequence) -> LabSequence:
    """Midpoint of the neighbouring observations; a single side is carried at the edges."""
    return _fill_columns(seq, _last_next)


def impute_row_mean(seq: LabSequence) -> LabSequence:
    """Mean of the test's observed values within the episode."""
    return _fill_columns(seq, lambda col, obs: np.full(len(col), col[obs].mean()))


def _nocb(col: np.ndarray, obs: np.ndarray) -> np.ndarray:
    last, nxt = _neighbours(obs)
    return np.where(nxt >= 0, col[np.maximum(nxt, 0)], col[np.maximum(last, 0)])


def impute_nocb(seq: LabSequence) -> LabSequence:
    """Next observation carried backward; trailing gaps carry the last observation forward."""
    return _fill_columns(seq, _nocb)


HEURISTICS: dict[str, Callable[[LabSequence], LabSequence]] = {
    "zero": impute_zero,
    "last&next": impute_last_next,
    "row mean": impute_row_mean,
    "NOCB": impute_nocb,
}


def _require_vrnn(model) -> None:
    if not isinstance(model, VrnnNN):
        raise TypeError(f"model-based imputation needs a vrnn_nn model, "
                        f"got {getattr(model, 'arch', type(model).__name__)}")


def impute_model(model, seq: LabSequence) -> LabSequence:
    """Fill missing entries with the VRNN decoder mean under posterior-mean latents."""
    _require_vrnn(model)
    recon = model.reconstruct([seq])[0][: seq.T]
    return seq.replace(values=np.where(seq.mask, seq.values, recon))


class ModelImputer:
    """Callable wrapper around :func:`impute_model` with a batched path."""

    def __init__(self, model, batch_size: int = 256):
        _require_vrnn(model)
        self.model = model
        self.batch_size = batch_size

    def __call__(self, seq: LabSequence) -> LabSequence:
        return impute_model(self.model, seq)

    def impute_all(self, seqs: Sequence[LabSequence]) -> list[LabSequence]:
        order = np.argsort([s.T for s in seqs], kind="stable")
        out: list = [None] * len(seqs)
        for i in range(0, len(seqs), self.batch_size):
            idx = order[i:i + self.batch_size]
            recon = self.model.reconstruct([seqs[j] for j in idx])
            for j, r in zip(idx, recon):
                out[j] = seqs[j].replace(values=np.where(seqs[j].mask, seqs[j].values, r))
        return out


@dataclass
class DropPlan:
    coordinates: np.ndarray  # (K, 3) rows of (episode, day, test)
    rate: float
    seed: int


def make_drop_plan(seqs: Sequence[LabSequence], rate: float = 0.10, seed: int = 0) -> DropPlan:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"drop rate must lie in (0, 1), got {rate}")
    coords = np.array([(n, t, m) for n, s in enumerate(seqs) for t, m in zip(*np.nonzero(s.mask))],
                      dtype=np.int64).reshape(-1, 3)
    k = int(np.floor(rate * len(coords) + 0.5))
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(coords), size=k, replace=False))
    return DropPlan(coords[pick], rate, seed)


def apply_drop_plan(seqs: Sequence[LabSequence], plan: DropPlan) -> list[LabSequence]:
    """Copies of ``seqs`` with the planned coordinates hidden (mask off, value 0)."""
    out = [s.replace() for s in seqs]
    for n, t, m in plan.coordinates:
        out[n].mask[t, m] = False
        out[n].values[t, m] = 0.0
    return out


@dataclass
class ImputationTable:
    methods: list
    seeds: list
    mse: dict  # method -> per-seed list
    comparisons: list = field(default_factory=list)

    def mean(self, method: str) -> float:
        return float(np.mean(self.mse[method]))

    def std(self, method: str) -> float:
        v = self.mse[method]
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "methods": [{"method": m, "mean": self.mean(m), "std": self.std(m),
                         "per_seed": list(self.mse[m])} for m in self.methods],
            "comparisons": self.comparisons,
        }


def evaluate_imputation(seqs: Sequence[LabSequence], methods: Mapping[str, Callable],
                        rate: float = 0.10, seeds: Sequence[int] = (1, 2, 3, 4, 5),
                        reference: str | None = None) -> ImputationTable:
    """Hide ``rate`` of the observed entries and score each method's MSE on them.

    The hidden copy is built once per seed and shared, so no method can see
    the held-out values.  With ``reference`` set, paired t-tests compare it
    against every other method across seeds.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"drop rate must lie in (0, 1), got {rate}")
    mse: dict = {name: [] for name in methods}
    for seed in seeds:
        plan = make_drop_plan(seqs, rate, seed)
        hidden = apply_drop_plan(seqs, plan)
        truth = np.array([seqs[n].values[t, m] for n, t, m in plan.coordinates])
        for name, method in methods.items():
            batched = getattr(method, "impute_all", None)
            filled = batched(hidden) if batched is not None else [method(s) for s in hidden]
            pred = np.array([filled[n].values[t, m] for n, t, m in plan.coordinates])
            mse[name].append(float(np.mean((pred - truth) ** 2)))
    table = ImputationTable(list(methods), list(seeds), mse)
    if reference is not None and len(seeds) >= 2:
        for name in methods:
            if name == reference:
                continue
            res = paired_t_test(mse[reference], mse[name])
            table.comparisons.append({"comparison": f"{reference} vs. {name}", "t": res.t,
                                      "p": res.p, "stars": res.stars})
    return table
