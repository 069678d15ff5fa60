from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError


@dataclass
class AdamState:
    lr: float = 0.0005
    lr_decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def effective_lr(self) -> float:
        """Learning rate after per-epoch multiplicative decay."""
        return self.lr * self.lr_decay ** self.epoch


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """Update ``params`` in place with bias-corrected Adam."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in parameter block {name!r}")
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
    state.step += 1
    t = state.step
    lr = state.effective_lr
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[float, bool]:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()])))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
        return total, True
    return total, False
