"""Adam with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-4, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """Update ``params`` (name -> ndarray) in place and return ``state``.

    Weight decay shrinks each parameter by ``lr * weight_decay`` before the
    bias-corrected moment update is applied.
    """
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        if m.shape != theta.shape:
            raise ValueError(f"optimizer state shape mismatch for {name}")
        if weight_decay:
            theta -= lr * weight_decay * theta
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    """Stateful wrapper over :func:`adam_step` for a ParameterStore."""

    def __init__(self, store, lr=1e-4, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = (beta1, beta2)
        self.eps = eps
        self.state = AdamState()

    def step(self):
        params = {name: p.data for name, p in self.store.items()}
        grads = {name: p.grad for name, p in self.store.items() if p.grad is not None}
        adam_step(params, grads, self.state, self.lr, self.weight_decay, *self.betas, self.eps)
