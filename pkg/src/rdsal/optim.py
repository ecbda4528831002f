"""Bias-corrected Adam over a named parameter registry."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place on `params` (dict name -> ndarray).

    `state` is a dict with keys "t", "m", "v"; pass {} on the first call.
    """
    if lr <= 0:
        raise ConfigError(f"adam_step: lr must be positive, got {lr}")
    if not state:
        state["t"] = 0
        state["m"] = {k: np.zeros_like(v) for k, v in params.items()}
        state["v"] = {k: np.zeros_like(v) for k, v in params.items()}
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.shape} for {name}")
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    """Convenience wrapper binding adam_step to a registry of Tensors."""

    def __init__(self, tensors, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"Adam: lr must be positive, got {lr}")
        self.tensors = tensors
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self):
        params = {k: t.data for k, t in self.tensors.items()}
        grads = {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.tensors.items()
        }
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None
