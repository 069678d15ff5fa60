"""Models over the time-averaged vector: NN, AE+NN and VAE+NN."""
from __future__ import annotations

import numpy as np

from ..numcore import Mlp
from ..numcore import autodiff as ad
from ..problayer import DiagGaussian, gaussian_head, kl_rows, masked_loglik_rows, reparameterize
from .base import ForwardTrace, Model, StaticBatch, gaussian_mlp


class NN(Model):
    """Classifier MLP straight on the averaged, zero-filled vector."""

    arch = "nn"

    def __init__(self, n_inputs, n_classes, hidden_dim=64, latent_dim=32, seed=0):
        super().__init__(n_inputs, n_classes, hidden_dim, latent_dim, seed)
        self.classifier = Mlp(n_inputs, hidden_dim, n_classes, self.rng, "cls")
        self.layers = [self.classifier]

    def forward(self, batch: StaticBatch, rng=None) -> ForwardTrace:
        x = ad.Tensor(batch.x)
        return ForwardTrace(logits=self.classifier(x), pooled=x)


class AeNN(Model):
    """Deterministic auto-encoder whose code feeds the classifier."""

    arch = "ae_nn"

    def __init__(self, n_inputs, n_classes, hidden_dim=64, latent_dim=32, seed=0):
        super().__init__(n_inputs, n_classes, hidden_dim, latent_dim, seed)
        self.encoder = Mlp(n_inputs, hidden_dim, latent_dim, self.rng, "enc")
        self.decoder = Mlp(latent_dim, hidden_dim, n_inputs, self.rng, "dec")
        self.classifier = Mlp(latent_dim, hidden_dim, n_classes, self.rng, "cls")
        self.layers = [self.encoder, self.decoder, self.classifier]

    def forward(self, batch: StaticBatch, rng=None) -> ForwardTrace:
        z = self.encoder(ad.Tensor(batch.x))
        return ForwardTrace(logits=self.classifier(z), pooled=z, latents=[z], recon=self.decoder(z))

    def generative_rows(self, trace, batch):
        """Squared reconstruction error summed over observed coordinates."""
        resid = ad.sub(trace.recon, batch.x)
        return ad.sum(ad.mul(ad.square(resid), batch.mask.astype(np.float64)), axis=-1)


class VaeNN(Model):
    """VAE on the averaged vector; the classifier reads the posterior mean."""

    arch = "vae_nn"

    def __init__(self, n_inputs, n_classes, hidden_dim=64, latent_dim=32, seed=0):
        super().__init__(n_inputs, n_classes, hidden_dim, latent_dim, seed)
        self.encoder = gaussian_mlp(n_inputs, hidden_dim, latent_dim, self.rng, "enc")
        self.decoder = gaussian_mlp(latent_dim, hidden_dim, n_inputs, self.rng, "dec")
        self.classifier = Mlp(latent_dim, hidden_dim, n_classes, self.rng, "cls")
        self.layers = [self.encoder, self.decoder, self.classifier]

    def forward(self, batch: StaticBatch, rng=None) -> ForwardTrace:
        post = gaussian_head(self.encoder(ad.Tensor(batch.x)), self.latent_dim)
        z = reparameterize(post, rng).z if rng is not None else post.mu
        dec = gaussian_head(self.decoder(z), self.n_inputs)
        return ForwardTrace(logits=self.classifier(post.mu), pooled=post.mu,
                            posteriors=[post], decoders=[dec], latents=[z], recon=dec.mu)

    def generative_rows(self, trace, batch):
        """Negative ELBO: KL to the standard normal minus the masked log-likelihood."""
        post = trace.posteriors[0]
        prior = DiagGaussian.standard(post.mu.shape)
        kl = kl_rows(post, prior)
        ll = masked_loglik_rows(batch.x, batch.mask, trace.decoders[0])
        return ad.sub(kl, ll)
