"""Minimal reverse-mode numeric core used by every model."""
from .autodiff import NonFiniteError, Tensor
from .checkpoint import load_arrays, save_arrays
from .gradcheck import GradCheckReport, grad_check
from .layers import (DenseLayer, LstmCell, Mlp, dense_backward, dense_forward, lstm_step,
                     lstm_step_backward, softmax)
from .optim import AdamState, adam_step, clip_global_norm

__all__ = [
    "AdamState", "DenseLayer", "GradCheckReport", "LstmCell", "Mlp", "NonFiniteError", "Tensor",
    "adam_step", "clip_global_norm", "dense_backward", "dense_forward", "grad_check",
    "load_arrays", "lstm_step", "lstm_step_backward", "save_arrays", "softmax",
]
