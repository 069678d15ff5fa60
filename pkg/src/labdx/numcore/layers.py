"""Dense layers, one-hidden-layer MLPs, the LSTM cell and softmax."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = ("relu", "identity")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class DenseLayer:
    """``y = act(W x + b)`` with ``W`` stored as (out, in)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None, name: str = "dense"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.activation = activation
        self.W = Tensor(glorot_uniform(rng, n_out, n_in), requires_grad=True, name=f"{name}.W")
        self.b = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected input dim {self.n_in}, got {x.shape[-1]}")
        y = ad.affine(x, self.W, self.b)
        return ad.relu(y) if self.activation == "relu" else y


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    y = layer(np.atleast_2d(x)).data
    return y[0] if squeeze else y


def dense_backward(layer: DenseLayer, x: np.ndarray, dy: np.ndarray):
    """Return ``(dx, dW, db)`` for upstream gradient ``dy``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    xt = Tensor(np.atleast_2d(x), requires_grad=True)
    W = Tensor(layer.W.data, requires_grad=True)
    b = Tensor(layer.b.data, requires_grad=True)
    if xt.shape[-1] != layer.n_in:
        raise ValueError(f"{layer.name}: expected input dim {layer.n_in}, got {xt.shape[-1]}")
    y = ad.affine(xt, W, b)
    if layer.activation == "relu":
        y = ad.relu(y)
    dy = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    if dy.shape != y.shape:
        raise ValueError(f"{layer.name}: upstream gradient shape {dy.shape} != output {y.shape}")
    y.backward(dy)
    dx = xt.grad[0] if squeeze else xt.grad
    return dx, W.grad, b.grad


class Mlp:
    """One hidden ReLU layer followed by a linear output layer."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, name: str):
        self.name = name
        self.hidden = DenseLayer(n_in, n_hidden, "relu", rng, name=f"{name}.l1")
        self.out = DenseLayer(n_hidden, n_out, "identity", rng, name=f"{name}.l2")

    def parameters(self) -> dict[str, Tensor]:
        return {**self.hidden.parameters(), **self.out.parameters()}

    def __call__(self, x) -> Tensor:
        return self.out(self.hidden(x))


class LstmCell:
    """LSTM over the concatenation ``[x, h_prev]``.

    ``W`` has shape (4H, in + H) with gate blocks ordered input, forget,
    output, candidate.  The forget-gate bias starts at +1.
    """

    GATES = ("input", "forget", "output", "candidate")

    def __init__(self, n_in: int, n_hidden: int = 64, rng: np.random.Generator | None = None,
                 name: str = "lstm", forget_bias: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.n_in = n_in
        self.n_hidden = n_hidden
        H = n_hidden
        W = np.concatenate([glorot_uniform(rng, H, n_in + H) for _ in range(4)], axis=0)
        b = np.zeros(4 * H)
        b[H:2 * H] = forget_bias
        self.W = Tensor(W, requires_grad=True, name=f"{name}.W")
        self.b = Tensor(b, requires_grad=True, name=f"{name}.b")

    def parameters(self) -> dict[str, Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}

    def gate_slice(self, gate: str) -> slice:
        k = self.GATES.index(gate)
        return slice(k * self.n_hidden, (k + 1) * self.n_hidden)

    def __call__(self, x, h_prev, c_prev) -> tuple[Tensor, Tensor]:
        x, h_prev, c_prev = ad.as_tensor(x), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected input dim {self.n_in}, got {x.shape[-1]}")
        if h_prev.shape[-1] != self.n_hidden or c_prev.shape[-1] != self.n_hidden:
            raise ValueError(f"{self.name}: state dims must be {self.n_hidden}")
        H = self.n_hidden
        z = ad.affine(ad.concat([x, h_prev], axis=-1), self.W, self.b)
        i, f, o, g = ad.split(z, [H, H, H, H], axis=-1)
        i, f, o, g = ad.sigmoid(i), ad.sigmoid(f), ad.sigmoid(o), ad.tanh(g)
        c = f * c_prev + i * g
        h = o * ad.tanh(c)
        return h, c


def lstm_step(cell: LstmCell, x_in, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    h, c = cell(np.atleast_2d(x_in), np.atleast_2d(h_prev), np.atleast_2d(c_prev))
    if np.ndim(x_in) == 1:
        return h.data[0], c.data[0]
    return h.data, c.data


def lstm_step_backward(cell: LstmCell, x_in, h_prev, c_prev, dh, dc=None) -> dict[str, np.ndarray]:
    """Gradients of ``<dh, h> + <dc, c>`` w.r.t. inputs, states and weights."""
    x = Tensor(np.atleast_2d(x_in), requires_grad=True)
    hp = Tensor(np.atleast_2d(h_prev), requires_grad=True)
    cp = Tensor(np.atleast_2d(c_prev), requires_grad=True)
    W = Tensor(cell.W.data, requires_grad=True)
    b = Tensor(cell.b.data, requires_grad=True)
    shadow = LstmCell.__new__(LstmCell)
    shadow.__dict__.update(cell.__dict__)
    shadow.W, shadow.b = W, b
    h, c = shadow(x, hp, cp)
    dh = np.atleast_2d(dh)
    dc = np.zeros_like(c.data) if dc is None else np.atleast_2d(dc)
    out = ad.sum(h * dh) + ad.sum(c * dc)
    out.backward()
    zeros = np.zeros
    return {
        "x": x.grad if x.grad is not None else zeros(x.shape),
        "h_prev": hp.grad if hp.grad is not None else zeros(hp.shape),
        "c_prev": cp.grad if cp.grad is not None else zeros(cp.shape),
        "W": W.grad,
        "b": b.grad,
    }


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
