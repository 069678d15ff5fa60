"""Sequence models: LSTM baseline (RNN+NN) and the variational RNN (VRNN+NN)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import LstmCell, Mlp, Tensor
from ..numcore import autodiff as ad
from ..problayer import DiagGaussian, gaussian_head, kl_rows, masked_loglik_rows, reparameterize
from .base import ForwardTrace, Model, SeqBatch, gaussian_mlp


def _mean_over_steps(hs: list[Tensor], steps: np.ndarray) -> Tensor:
    """Average hidden states over the valid (unpadded) days of each sequence."""
    weights = steps.astype(np.float64)
    inv_len = 1.0 / weights.sum(axis=1, keepdims=True)
    acc = None
    for t, h in enumerate(hs):
        term = ad.mul(h, weights[:, t:t + 1])
        acc = term if acc is None else ad.add(acc, term)
    return ad.mul(acc, inv_len)


class RnnNN(Model):
    arch = "rnn_nn"
    sequential = True

    def __init__(self, n_inputs, n_classes, hidden_dim=64, latent_dim=32, seed=0):
        super().__init__(n_inputs, n_classes, hidden_dim, latent_dim, seed)
        self.cell = LstmCell(n_inputs, hidden_dim, self.rng, "lstm")
        self.classifier = Mlp(hidden_dim, hidden_dim, n_classes, self.rng, "cls")
        self.layers = [self.cell, self.classifier]

    def forward(self, batch: SeqBatch, rng=None) -> ForwardTrace:
        B, T, _ = batch.x.shape
        h = ad.Tensor(np.zeros((B, self.hidden_dim)))
        c = ad.Tensor(np.zeros((B, self.hidden_dim)))
        hs = []
        for t in range(T):
            h, c = self.cell(batch.x[:, t], h, c)
            hs.append(h)
        pooled = _mean_over_steps(hs, batch.steps)
        return ForwardTrace(logits=self.classifier(pooled), pooled=pooled, hidden=hs)


@dataclass
class VrnnStep:
    prior: DiagGaussian
    posterior: DiagGaussian
    decoder: DiagGaussian
    z: Tensor
    h: Tensor
    c: Tensor


class VrnnNN(Model):
    """Per-day latent with a learned prior from the previous state.

    prior      p(z_t | h_{t-1})
    encoder    q(z_t | x_t, h_{t-1})
    decoder    p(x_t | z_t, h_{t-1})
    recurrence h_t = LSTM([x_t, z_t], h_{t-1})
    """

    arch = "vrnn_nn"
    sequential = True

    def __init__(self, n_inputs, n_classes, hidden_dim=64, latent_dim=32, seed=0):
        super().__init__(n_inputs, n_classes, hidden_dim, latent_dim, seed)
        H, L, M = hidden_dim, latent_dim, n_inputs
        self.prior_net = gaussian_mlp(H, H, L, self.rng, "prior")
        self.encoder = gaussian_mlp(M + H, H, L, self.rng, "enc")
        self.decoder = gaussian_mlp(L + H, H, M, self.rng, "dec")
        self.cell = LstmCell(M + L, H, self.rng, "lstm")
        self.classifier = Mlp(H, H, n_classes, self.rng, "cls")
        self.layers = [self.prior_net, self.encoder, self.decoder, self.cell, self.classifier]

    def step(self, x_t: np.ndarray, mask_t: np.ndarray, h_prev: Tensor, c_prev: Tensor,
             rng: np.random.Generator | None) -> VrnnStep:
        x = ad.Tensor(np.where(mask_t, x_t, 0.0))
        prior = gaussian_head(self.prior_net(h_prev), self.latent_dim)
        post = gaussian_head(self.encoder(ad.concat([x, h_prev], axis=-1)), self.latent_dim)
        z = reparameterize(post, rng).z if rng is not None else post.mu
        dec = gaussian_head(self.decoder(ad.concat([z, h_prev], axis=-1)), self.n_inputs)
        h, c = self.cell(ad.concat([x, z], axis=-1), h_prev, c_prev)
        return VrnnStep(prior, post, dec, z, h, c)

    def forward(self, batch: SeqBatch, rng=None) -> ForwardTrace:
        B, T, _ = batch.x.shape
        h = ad.Tensor(np.zeros((B, self.hidden_dim)))
        c = ad.Tensor(np.zeros((B, self.hidden_dim)))
        trace = ForwardTrace(logits=None, pooled=None)
        for t in range(T):
            s = self.step(batch.x[:, t], batch.mask[:, t], h, c, rng)
            h, c = s.h, s.c
            trace.priors.append(s.prior)
            trace.posteriors.append(s.posterior)
            trace.decoders.append(s.decoder)
            trace.latents.append(s.z)
            trace.hidden.append(h)
        trace.pooled = _mean_over_steps(trace.hidden, batch.steps)
        trace.logits = self.classifier(trace.pooled)
        return trace

    def generative_rows(self, trace, batch):
        """Sum over valid days of KL(posterior || learned prior) minus masked log-likelihood."""
        steps = batch.steps.astype(np.float64)
        acc = None
        for t in range(len(trace.hidden)):
            kl = ad.mul(kl_rows(trace.posteriors[t], trace.priors[t]), steps[:, t])
            ll = masked_loglik_rows(batch.x[:, t], batch.mask[:, t], trace.decoders[t])
            term = ad.sub(kl, ll)
            acc = term if acc is None else ad.add(acc, term)
        return acc

    def reconstruct(self, seqs) -> list[np.ndarray]:
        """Decoder means for every day, running on posterior means."""
        batch = self.make_batch(seqs)
        with ad.no_grad():
            trace = self.forward(batch, None)
        mu = np.stack([d.mu.data for d in trace.decoders], axis=1)
        return [mu[i, :s.T] for i, s in enumerate(seqs)]
