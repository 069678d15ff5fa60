import math

import numpy as np
import pytest

from labdx.config import RunConfig
from labdx.data import LabSequence
from labdx.metrics import f1_scores, PredictionSet
from labdx.models import (ARCHITECTURES, ArchitectureMismatch, ForwardTrace, extract_features, load_checkpoint,
                          nn_forward, rnn_forward, save_model, vae_forward, vrnn_step)
from labdx.numcore import Tensor
from labdx.problayer import LOG_SIGMA_MIN, DiagGaussian, kl_rows, masked_loglik_rows
from labdx.training import fit, predict

from .helpers import HIDDEN, LATENT, M, STOCHASTIC, loss_and_grads, mini_model, mini_sequences, objective_grad_check

ALL = sorted(ARCHITECTURES)


@pytest.mark.parametrize("arch", ALL)
def test_objective_gradient(arch):
    report = objective_grad_check(arch)
    assert report.n_checked > 0
    assert report.passed, report.worst


@pytest.mark.parametrize("arch", ALL)
def test_eta_zero_is_cross_entropy(arch):
    model = mini_model(arch)
    batch = model.make_batch(mini_sequences())
    rng = np.random.default_rng(0) if arch in STOCHASTIC else None
    parts = model.loss(batch, rng, eta=0.0)
    assert float(parts.total.data) == parts.disc


@pytest.mark.parametrize("arch", ALL)
def test_masked_values_change_nothing(arch):
    seqs = mini_sequences(1)
    rng = np.random.default_rng(5)
    junk = [s.replace(values=np.where(s.mask, s.values, rng.normal(size=s.values.shape) * 1e3)) for s in seqs]
    results = []
    for data in (seqs, junk):
        model = mini_model(arch, 1)
        batch = model.make_batch(data)
        value, grads = loss_and_grads(model, batch, noise_seed=3)(model.state())
        results.append((value, grads, model.predict_proba(batch)))
    (v1, g1, p1), (v2, g2, p2) = results
    assert v1 == v2
    assert p1.tobytes() == p2.tobytes()
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes(), k


@pytest.mark.parametrize("arch", ALL)
def test_probabilities_sum_to_one(arch):
    model = mini_model(arch)
    probs = model.predict_proba(model.make_batch(mini_sequences(2)))
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-12)


@pytest.mark.parametrize("arch", ALL)
def test_same_seed_same_trace(arch):
    seqs = mini_sequences(3)
    out = []
    for _ in range(2):
        model = mini_model(arch, 7)
        batch = model.make_batch(seqs)
        rng = np.random.default_rng(4) if arch in STOCHASTIC else None
        out.append(model.loss(batch, rng).total.data.tobytes())
    assert out[0] == out[1]


class TestNN:
    def test_zero_weights_uniform(self):
        model = mini_model("nn")
        for p in model.parameters().values():
            p.data[:] = 0.0
        probs = nn_forward(model, mini_sequences())
        np.testing.assert_allclose(probs, 1 / 3, rtol=0, atol=1e-15)

    def test_dim_mismatch(self):
        model = mini_model("nn")
        bad = LabSequence(np.zeros((2, M + 1)), np.ones((2, M + 1), bool), 0)
        with pytest.raises(ValueError):
            nn_forward(model, [bad])

    def test_separable_training(self):
        rng = np.random.default_rng(0)
        centres = np.array([[3.0, 0, 0, 0], [0, 3.0, 0, 0], [0, 0, 3.0, 0]])
        seqs = []
        for i in range(300):
            y = i % 3
            v = centres[y] + rng.normal(scale=0.5, size=4)
            seqs.append(LabSequence(v[None, :], np.ones((1, 4), bool), y))
        cfg = RunConfig(model="nn", max_epochs=30, seed=0)
        model, _ = fit(cfg, seqs[:240], seqs[240:])
        micro = f1_scores(PredictionSet(predict(model, seqs[:240]), [s.label for s in seqs[:240]]))[0]
        assert micro > 0.95


class TestAE:
    def test_perfect_reconstruction_zero_loss(self):
        model = mini_model("ae_nn")
        batch = model.make_batch(mini_sequences())
        trace = ForwardTrace(logits=None, pooled=None, recon=Tensor(batch.x.copy()))
        assert np.all(model.generative_rows(trace, batch).data == 0.0)


class TestVAE:
    def test_classifier_reads_posterior_mean(self):
        model = mini_model("vae_nn")
        trace = vae_forward(model, mini_sequences(), np.random.default_rng(0))
        assert trace.pooled is trace.posteriors[0].mu
        assert not np.array_equal(trace.latents[0].data, trace.posteriors[0].mu.data)

    def test_sigma_floor(self):
        model = mini_model("vae_nn")
        for p in model.decoder.parameters().values():
            p.data = p.data * 1e3
        trace = vae_forward(model, mini_sequences(), np.random.default_rng(0))
        assert np.all(trace.decoders[0].log_sigma.data >= LOG_SIGMA_MIN)

    def test_all_masked_input_is_kl_only(self):
        model = mini_model("vae_nn")
        seqs = [s.replace(values=np.zeros_like(s.values), mask=np.zeros_like(s.mask)) for s in mini_sequences()]
        batch = model.make_batch(seqs)
        trace = model.forward(batch, np.random.default_rng(0))
        post = trace.posteriors[0]
        kl = kl_rows(post, DiagGaussian.standard(post.mu.shape)).data
        np.testing.assert_array_equal(model.generative_rows(trace, batch).data, kl)

    def test_feature_dim(self):
        model = mini_model("vae_nn")
        assert extract_features(model, mini_sequences()).shape == (4, LATENT)


class TestRNN:
    def test_single_step_mean_is_h1(self):
        model = mini_model("rnn_nn")
        trace = rnn_forward(model, mini_sequences(t=1))
        np.testing.assert_array_equal(trace.pooled.data, trace.hidden[0].data)

    def test_order_sensitive(self):
        model = mini_model("rnn_nn")
        seq = mini_sequences(p_obs=1.0)[0]
        flipped = seq.replace(values=seq.values[::-1].copy(), mask=seq.mask[::-1].copy())
        a = model.predict_proba(model.make_batch([seq]))
        b = model.predict_proba(model.make_batch([flipped]))
        assert not np.allclose(a, b)

    def test_padding_excluded_from_mean(self):
        model = mini_model("rnn_nn")
        short = mini_sequences(t=2)[0]
        alone = extract_features(model, [short])
        padded = extract_features(model, [short, mini_sequences(t=5)[1]])[:1]
        np.testing.assert_allclose(alone, padded, rtol=1e-12, atol=1e-15)


class TestVRNN:
    def test_first_prior_shared(self):
        model = mini_model("vrnn_nn")
        trace = model.forward(model.make_batch(mini_sequences()), np.random.default_rng(0))
        mu = trace.priors[0].mu.data
        assert np.all(mu == mu[0])

    def test_step_matches_forward(self):
        model = mini_model("vrnn_nn")
        seqs = mini_sequences()
        batch = model.make_batch(seqs)
        trace = model.forward(batch, None)
        zeros = np.zeros((len(seqs), HIDDEN))
        s = vrnn_step(model, batch.x[:, 0], batch.mask[:, 0], zeros, zeros)
        np.testing.assert_array_equal(s.h.data, trace.hidden[0].data)
        np.testing.assert_array_equal(s.z.data, trace.posteriors[0].mu.data)

    def test_pinned_prior_matches_standard_kl(self):
        model = mini_model("vrnn_nn")
        for p in model.prior_net.out.parameters().values():
            p.data[:] = 0.0
        trace = model.forward(model.make_batch(mini_sequences()), np.random.default_rng(1))
        for post, prior in zip(trace.posteriors, trace.priors):
            learned = kl_rows(post, prior).data
            standard = kl_rows(post, DiagGaussian.standard(post.mu.shape)).data
            np.testing.assert_allclose(learned, standard, rtol=1e-12)

    def test_unobserved_day_contributes_only_kl(self):
        model = mini_model("vrnn_nn")
        seqs = mini_sequences()
        seqs = [s.replace(mask=np.vstack([s.mask[:1], np.zeros_like(s.mask[1:])]),
                          values=np.vstack([s.values[:1], np.zeros_like(s.values[1:])])) for s in seqs]
        batch = model.make_batch(seqs)
        trace = model.forward(batch, np.random.default_rng(0))
        ll = masked_loglik_rows(batch.x[:, 1], batch.mask[:, 1], trace.decoders[1]).data
        assert np.all(ll == 0.0)

    def test_feature_dim_and_determinism(self):
        model = mini_model("vrnn_nn")
        seqs = mini_sequences()
        f1, f2 = extract_features(model, seqs), extract_features(model, seqs)
        assert f1.shape == (4, HIDDEN)
        assert f1.tobytes() == f2.tobytes()

    def test_reconstruct_shapes(self):
        model = mini_model("vrnn_nn")
        seqs = mini_sequences(t=4)
        out = model.reconstruct(seqs)
        assert [r.shape for r in out] == [(4, M)] * 4


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = mini_model("vrnn_nn", 3)
        save_model(model, tmp_path / "m.npz", {"config_hash": "abc"})
        back, _, meta = load_checkpoint(tmp_path / "m.npz", "vrnn_nn")
        assert meta["config_hash"] == "abc"
        for k, v in model.state().items():
            assert back.state()[k].tobytes() == v.tobytes()

    def test_refuses_other_architecture(self, tmp_path):
        save_model(mini_model("rnn_nn"), tmp_path / "m.npz")
        with pytest.raises(ArchitectureMismatch):
            load_checkpoint(tmp_path / "m.npz", "vrnn_nn")

    def test_rejects_wrong_shapes(self):
        small, big = mini_model("nn"), mini_model("nn")
        state = big.state()
        state["cls.l1.W"] = np.zeros((2, 2))
        with pytest.raises(ArchitectureMismatch):
            small.load_state(state)


def test_log_sigma_floor_is_e_minus_7():
    assert math.exp(LOG_SIGMA_MIN) == pytest.approx(math.exp(-7))
