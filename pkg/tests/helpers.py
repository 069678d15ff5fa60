"""Shared miniature fixtures for model tests."""
import numpy as np

from labdx.data import LabSequence
from labdx.models import build_model
from labdx.numcore import grad_check

# miniature shape used by every end-to-end gradient check
N, M, T, LATENT, HIDDEN, CLASSES = 4, 5, 3, 3, 4, 3
STOCHASTIC = {"vae_nn", "vrnn_nn"}


def mini_sequences(seed=0, n=N, t=T, m=M, p_obs=0.6):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(n):
        mask = rng.random((t, m)) < p_obs
        mask[0, i % m] = True
        values = np.where(mask, rng.normal(size=(t, m)), 0.0)
        seqs.append(LabSequence(values, mask, i % CLASSES, f"mini{i}"))
    return seqs


def mini_model(arch, seed=0):
    model = build_model(arch, M, CLASSES, hidden_dim=HIDDEN, latent_dim=LATENT, seed=seed)
    # non-zero biases so no unit sits exactly on a ReLU kink
    rng = np.random.default_rng(seed + 100)
    for name, p in model.parameters().items():
        if name.endswith(".b"):
            p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    return model


def loss_and_grads(model, batch, noise_seed=0, eta=0.5, disc_weight=1.0):
    """Closure for ``grad_check`` that replays the same noise on every call."""
    params = model.parameters()

    def function(arrays):
        for k, arr in arrays.items():
            params[k].data = arr
        model.zero_grad()
        rng = np.random.default_rng(noise_seed) if model.arch in STOCHASTIC else None
        total = model.loss(batch, rng, eta, disc_weight).total
        total.backward()
        return float(total.data), {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                                   for k, p in params.items()}

    return function


def objective_grad_check(arch, seed=0, tolerance=None):
    model = mini_model(arch, seed)
    batch = model.make_batch(mini_sequences(seed))
    if tolerance is None:
        tolerance = 1e-3 if arch in STOCHASTIC else 1e-4
    report = grad_check(loss_and_grads(model, batch), model.state(), tolerance=tolerance, max_coords=2000)
    return report
