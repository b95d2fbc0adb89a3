"""Adam and momentum SGD over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _check_grads(params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    missing = set(params) - set(grads)
    if missing:
        raise ContractError(f"no gradient for parameter(s) {sorted(missing)}")
    for name, p in params.items():
        if np.shape(grads[name]) != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {np.shape(grads[name])}, parameter is {p.shape}")


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float | None = None) -> dict[str, Tensor]:
    """One bias-corrected Adam update; parameter tensors get fresh data arrays."""
    _check_grads(params, grads)
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        adam_step(self.params, grads, self.state, lr=lr)


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}
        self.steps = 0

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        _check_grads(self.params, grads)
        lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            g = grads[name] + self.weight_decay * p.data
            v = self.momentum * self.velocity.get(name, 0.0) + g
            self.velocity[name] = v
            p.data = p.data - lr * v
        self.steps += 1
