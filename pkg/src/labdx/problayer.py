"""Diagonal Gaussians, reparameterised sampling, KL and masked likelihoods.

Scalar-valued helpers (``kl_diag``, ``masked_gaussian_loglik``,
``cross_entropy``) work on plain arrays.  The ``*_rows`` variants take
:class:`~labdx.numcore.Tensor` inputs, return one value per batch row and
carry hand-derived gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import autodiff as ad
from .numcore.autodiff import Tensor

LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 7.0
PROB_FLOOR = 1e-12
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian parameterised by mean and log standard deviation.

    Fields hold either numpy arrays or tensors.
    """

    mu: object
    log_sigma: object

    @classmethod
    def from_std(cls, mu, sigma) -> "DiagGaussian":
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        return cls(np.asarray(mu, dtype=np.float64), np.log(sigma))

    @classmethod
    def standard(cls, shape) -> "DiagGaussian":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def sigma(self):
        ls = self.log_sigma.data if isinstance(self.log_sigma, Tensor) else self.log_sigma
        return np.exp(ls)

    def values(self) -> "DiagGaussian":
        """Copy with tensors replaced by their numpy values."""
        unwrap = lambda a: a.data if isinstance(a, Tensor) else np.asarray(a)
        return DiagGaussian(unwrap(self.mu), unwrap(self.log_sigma))


@dataclass
class LatentSample:
    z: object
    noise: np.ndarray


def gaussian_head(out: Tensor, dim: int) -> DiagGaussian:
    """Split a network output of width ``2*dim`` into (mu, clamped log sigma)."""
    if out.shape[-1] != 2 * dim:
        raise ValueError(f"expected head width {2 * dim}, got {out.shape[-1]}")
    mu, raw = ad.split(out, [dim, dim], axis=-1)
    return DiagGaussian(mu, ad.clip(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX))


def _kl_terms(mu_q, ls_q, mu_p, ls_p):
    var_ratio = np.exp(2.0 * (ls_q - ls_p))
    diff2 = (mu_q - mu_p) ** 2 * np.exp(-2.0 * ls_p)
    return ls_p - ls_q + 0.5 * (var_ratio + diff2) - 0.5


def kl_diag(q: DiagGaussian, p: DiagGaussian) -> float:
    """KL(q || p) summed over all dimensions."""
    q, p = q.values(), p.values()
    if np.shape(q.mu) != np.shape(p.mu):
        raise ValueError(f"dimension mismatch: {np.shape(q.mu)} vs {np.shape(p.mu)}")
    return float(np.sum(_kl_terms(q.mu, q.log_sigma, p.mu, p.log_sigma)))


def kl_rows(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """Per-row KL(q || p) for (B, D) tensors; returns shape (B,)."""
    mu_q, ls_q = ad.as_tensor(q.mu), ad.as_tensor(q.log_sigma)
    mu_p, ls_p = ad.as_tensor(p.mu), ad.as_tensor(p.log_sigma)
    if mu_q.shape != mu_p.shape:
        raise ValueError(f"dimension mismatch: {mu_q.shape} vs {mu_p.shape}")
    inv_vp = np.exp(-2.0 * ls_p.data)
    vq_over_vp = np.exp(2.0 * (ls_q.data - ls_p.data))
    d = mu_q.data - mu_p.data
    terms = ls_p.data - ls_q.data + 0.5 * (vq_over_vp + d * d * inv_vp) - 0.5

    def backward(g):
        g = g[..., None]
        if mu_q.requires_grad:
            mu_q._accumulate(g * d * inv_vp)
        if mu_p.requires_grad:
            mu_p._accumulate(-g * d * inv_vp)
        if ls_q.requires_grad:
            ls_q._accumulate(g * (vq_over_vp - 1.0))
        if ls_p.requires_grad:
            ls_p._accumulate(g * (1.0 - vq_over_vp - d * d * inv_vp))

    return ad._make(terms.sum(axis=-1), (mu_q, ls_q, mu_p, ls_p), backward, "kl_rows")


def reparameterize(g: DiagGaussian, rng: np.random.Generator) -> LatentSample:
    """Draw ``z = mu + sigma * eps``; gradients reach mu and log sigma only."""
    mu = g.mu
    eps = rng.standard_normal(np.shape(mu.data if isinstance(mu, Tensor) else mu))
    if isinstance(mu, Tensor) or isinstance(g.log_sigma, Tensor):
        z = ad.add(mu, ad.mul(ad.exp(g.log_sigma), eps))
    else:
        z = np.asarray(mu) + np.exp(np.asarray(g.log_sigma)) * eps
    return LatentSample(z, eps)


def masked_gaussian_loglik(x, mask, g: DiagGaussian) -> float:
    """Gaussian log density summed over observed coordinates only."""
    g = g.values()
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    xz = np.where(mask, x, 0.0)
    terms = -HALF_LOG_2PI - g.log_sigma - 0.5 * ((xz - g.mu) * np.exp(-g.log_sigma)) ** 2
    return float(np.sum(np.where(mask, terms, 0.0)))


def masked_loglik_rows(x: np.ndarray, mask: np.ndarray, g: DiagGaussian) -> Tensor:
    """Per-row masked log-likelihood for a (..., D) batch; sums the last axis."""
    mu, ls = ad.as_tensor(g.mu), ad.as_tensor(g.log_sigma)
    m = np.asarray(mask, dtype=bool)
    w = m.astype(np.float64)
    xz = np.where(m, np.asarray(x, dtype=np.float64), 0.0)
    inv_s = np.exp(-ls.data)
    r = (xz - mu.data) * inv_s
    terms = np.where(m, -HALF_LOG_2PI - ls.data - 0.5 * r * r, 0.0)

    def backward(gr):
        gr = gr[..., None]
        if mu.requires_grad:
            mu._accumulate(gr * w * r * inv_s)
        if ls.requires_grad:
            ls._accumulate(gr * w * (r * r - 1.0))

    return ad._make(terms.sum(axis=-1), (mu, ls), backward, "masked_loglik_rows")


def cross_entropy(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not (0 <= int(label) < probs.shape[-1]) or int(label) != label:
        raise ValueError(f"label {label!r} outside [0, {probs.shape[-1]})")
    return float(-np.log(max(probs[int(label)], PROB_FLOOR)))


def cross_entropy_rows(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row ``-log softmax(logits)[label]`` with the probability floor applied."""
    labels = np.asarray(labels, dtype=np.int64)
    C = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels outside [0, {C})")
    logp = ad.log_softmax(logits)
    picked = ad.getitem(logp, (np.arange(len(labels)), labels))
    floored = ad.clip(picked, math.log(PROB_FLOOR), 0.0)
    return ad.neg(floored)
