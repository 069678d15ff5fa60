import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from labdx.numcore import (AdamState, DenseLayer, LstmCell, NonFiniteError, Tensor, adam_step,
                           clip_global_norm, dense_backward, dense_forward, grad_check, lstm_step,
                           lstm_step_backward, softmax)
from labdx.numcore import autodiff as ad


def numeric_grad(f, x, h=1e-6):
    """Plain central differences, kept independent of ``grad_check``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def max_rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


class TestDense:
    def test_identity_map(self):
        layer = DenseLayer(2, 2, "identity")
        layer.W.data = np.eye(2)
        layer.b.data = np.zeros(2)
        np.testing.assert_array_equal(dense_forward(layer, [1.0, 2.0]), [1.0, 2.0])

    def test_relu(self):
        layer = DenseLayer(2, 2, "relu")
        layer.W.data = np.eye(2)
        layer.b.data = np.zeros(2)
        np.testing.assert_array_equal(dense_forward(layer, [-1.0, 2.0]), [0.0, 2.0])

    def test_shape_mismatch_names_dims(self):
        layer = DenseLayer(4, 3)
        with pytest.raises(ValueError, match="expected input dim 4, got 5"):
            dense_forward(layer, np.zeros(5))

    @pytest.mark.parametrize("activation", ["identity", "relu"])
    def test_backward_matches_finite_differences(self, activation):
        rng = np.random.default_rng(3)
        layer = DenseLayer(4, 3, activation, rng)
        layer.b.data = rng.normal(size=3)
        x = rng.normal(size=(5, 4))
        dy = rng.normal(size=(5, 3))
        pre = x @ layer.W.data.T + layer.b.data
        assert np.min(np.abs(pre)) > 1e-3  # away from kinks

        def scalar_w(W):
            y = x @ W.T + layer.b.data
            y = np.maximum(y, 0) if activation == "relu" else y
            return np.sum(y * dy)

        def scalar_x(xx):
            y = xx @ layer.W.data.T + layer.b.data
            y = np.maximum(y, 0) if activation == "relu" else y
            return np.sum(y * dy)

        dx, dW, db = dense_backward(layer, x, dy)
        assert max_rel(dW, numeric_grad(scalar_w, layer.W.data)) < 1e-4
        assert max_rel(dx, numeric_grad(scalar_x, x)) < 1e-4
        on = pre > 0 if activation == "relu" else np.ones_like(pre, dtype=bool)
        np.testing.assert_allclose(db, (dy * on).sum(axis=0), rtol=1e-12)


class TestLstm:
    def test_zero_weights_zero_state(self):
        cell = LstmCell(3, 4, forget_bias=0.0)
        cell.W.data[:] = 0.0
        h, c = lstm_step(cell, np.ones(3), np.zeros(4), np.zeros(4))
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(c, 0.0)

    def test_forget_gate_halves_cell(self):
        cell = LstmCell(3, 4, forget_bias=0.0)
        cell.W.data[:] = 0.0
        c_prev = np.array([1.0, -2.0, 0.5, 4.0])
        _, c = lstm_step(cell, np.ones(3), np.zeros(4), c_prev)
        np.testing.assert_allclose(c, 0.5 * c_prev, rtol=0, atol=1e-15)

    def test_default_forget_bias(self):
        cell = LstmCell(2, 3)
        np.testing.assert_array_equal(cell.b.data[cell.gate_slice("forget")], 1.0)
        np.testing.assert_array_equal(cell.b.data[cell.gate_slice("input")], 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            lstm_step(LstmCell(3, 4), np.zeros(2), np.zeros(4), np.zeros(4))

    def test_all_gradient_blocks_match_finite_differences(self):
        rng = np.random.default_rng(0)
        cell = LstmCell(3, 4, rng)
        cell.b.data = rng.normal(size=cell.b.shape) * 0.5
        x, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        dh, dc = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

        def objective(W=None, b=None, x_=None, h_=None, c_=None):
            saved = cell.W.data, cell.b.data
            cell.W.data = saved[0] if W is None else W
            cell.b.data = saved[1] if b is None else b
            h, c = lstm_step(cell, x if x_ is None else x_, h0 if h_ is None else h_, c0 if c_ is None else c_)
            cell.W.data, cell.b.data = saved
            return np.sum(h * dh) + np.sum(c * dc)

        g = lstm_step_backward(cell, x, h0, c0, dh, dc)
        nW = numeric_grad(lambda W: objective(W=W), cell.W.data)
        nb = numeric_grad(lambda b: objective(b=b), cell.b.data)
        for gate in LstmCell.GATES:
            sl = cell.gate_slice(gate)
            assert max_rel(g["W"][sl], nW[sl]) < 1e-4, gate
            assert max_rel(g["b"][sl], nb[sl]) < 1e-4, gate
        assert max_rel(g["x"], numeric_grad(lambda v: objective(x_=v), x)) < 1e-4
        assert max_rel(g["h_prev"], numeric_grad(lambda v: objective(h_=v), h0)) < 1e-4
        assert max_rel(g["c_prev"], numeric_grad(lambda v: objective(c_=v), c0)) < 1e-4


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=1e-15)

    def test_two_logits(self):
        # 1 / (1 + e), e / (1 + e)
        np.testing.assert_allclose(softmax([1.0, 2.0]), [0.26894142, 0.73105858], atol=1e-5)

    def test_shift_invariance(self):
        z = np.array([0.3, -1.2, 2.5])
        np.testing.assert_allclose(softmax(z + 123.0), softmax(z), rtol=1e-12)

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 700)))
    @settings(max_examples=200, deadline=None)
    def test_positive_and_normalised(self, z):
        p = softmax(z)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0)

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
    @settings(max_examples=100, deadline=None)
    def test_strictly_positive_on_moderate_logits(self, z):
        assert np.all(softmax(z) > 0)


class TestAdam:
    def test_one_step_with_bias_correction(self):
        params = {"w": np.zeros(1)}
        state = AdamState(lr=0.0005)
        adam_step(state, params, {"w": np.ones(1)})
        # m_hat = v_hat = 1, so the update is lr / (1 + eps)
        np.testing.assert_allclose(params["w"], [-0.0005 / (1 + 1e-8)], rtol=1e-12)

    def test_zero_gradient_is_null_update(self):
        params = {"w": np.array([0.3, -0.2])}
        adam_step(AdamState(), params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [0.3, -0.2])

    def test_nan_gradient_names_block(self):
        with pytest.raises(NonFiniteError, match="enc.W"):
            adam_step(AdamState(), {"enc.W": np.zeros(2)}, {"enc.W": np.array([1.0, np.nan])})

    def test_lr_decays_per_epoch(self):
        state = AdamState(lr=0.0005, lr_decay=0.99, epoch=3)
        assert state.effective_lr == pytest.approx(0.0005 * 0.99 ** 3, rel=1e-15)

    def test_bit_identical_trajectories(self):
        def run():
            rng = np.random.default_rng(11)
            params = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
            state = AdamState()
            for _ in range(50):
                grads = {k: 2 * v + rng.normal(size=v.shape) for k, v in params.items()}
                adam_step(state, params, grads)
            return params

        p1, p2 = run(), run()
        for k in p1:
            assert p1[k].tobytes() == p2[k].tobytes()

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm, clipped = clip_global_norm(grads, 1.0)
        assert norm == 5.0 and clipped
        np.testing.assert_allclose(np.hypot(grads["a"], grads["b"]), 1.0)


class TestGradCheck:
    def test_quadratic_exact(self):
        rep = grad_check(lambda x: (np.sum(x * x), 2 * x), np.array([1.0, 2.0]), tolerance=1e-8)
        assert rep.passed
        assert rep.max_rel_error < 1e-8

    def test_detects_wrong_gradient(self):
        rep = grad_check(lambda x: (np.sum(x * x), 3 * x), np.array([1.0, 2.0]), tolerance=1e-4)
        assert not rep.passed

    def test_relu_kink_excluded(self):
        def f(x):
            return float(np.sum(np.maximum(x, 0))), (x > 0).astype(float)

        rep = grad_check(f, np.array([0.0, 1.5, -2.0]), tolerance=1e-6)
        assert rep.n_excluded == 1
        assert rep.n_checked == 2
        assert rep.passed

    def test_non_finite_loss_rejected(self):
        with pytest.raises(NonFiniteError):
            grad_check(lambda x: (np.inf, x), np.ones(2))

    def test_samples_at_most_max_coords(self):
        x = np.linspace(-1, 1, 3000)
        rep = grad_check(lambda v: (np.sum(v ** 2), 2 * v), x, max_coords=1000)
        assert rep.n_checked == 1000


class TestAutodiff:
    def test_non_finite_detection(self):
        with pytest.raises(NonFiniteError):
            ad.log(Tensor([0.0]))
        with pytest.raises(NonFiniteError):
            ad.exp(Tensor([1e4]))

    def test_broadcast_gradient(self):
        a = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        ad.sum(a * b + b).backward()
        np.testing.assert_array_equal(b.grad, [6.0, 6.0])
        np.testing.assert_array_equal(a.grad, np.ones((3, 2)))

    def test_composite_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        x0 = rng.normal(size=(2, 3))

        def value(x):
            t = Tensor(x)
            parts = ad.split(ad.concat([ad.tanh(t), ad.sigmoid(t)], axis=-1), [2, 4], axis=-1)
            y = ad.log_softmax(parts[1]) * parts[0][:, :1]
            return float(ad.sum(ad.square(y) + ad.clip(t, -0.5, 0.5)[:, :1]).data)

        t = Tensor(x0, requires_grad=True)
        parts = ad.split(ad.concat([ad.tanh(t), ad.sigmoid(t)], axis=-1), [2, 4], axis=-1)
        y = ad.log_softmax(parts[1]) * parts[0][:, :1]
        ad.sum(ad.square(y) + ad.clip(t, -0.5, 0.5)[:, :1]).backward()
        assert max_rel(t.grad, numeric_grad(value, x0)) < 1e-5

    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with ad.no_grad():
            y = ad.mul(w, 2.0)
        assert not y.requires_grad
        assert math.isclose(float(y.data.sum()), 4.0)
