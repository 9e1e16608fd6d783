"""Adam and AdamW (decoupled weight decay) with bias correction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingAborted


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = False  # True -> AdamW


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_state(param):
    return AdamState(np.zeros_like(param), np.zeros_like(param), 0)


def optimizer_step(param, grad, state, hyper):
    """One Adam/AdamW update. Returns ``(new_param, new_state)``; inputs are not mutated."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ValueError("parameter, gradient and state shapes disagree")
    if not np.all(np.isfinite(grad)):
        raise TrainingAborted("non-finite gradient", {"step": state.t + 1})
    if hyper.weight_decay and not hyper.decoupled:
        grad = grad + hyper.weight_decay * param
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad * grad
    m_hat = m / (1.0 - hyper.beta1 ** t)
    v_hat = v / (1.0 - hyper.beta2 ** t)
    new = param - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    if hyper.weight_decay and hyper.decoupled:
        new = new - hyper.lr * hyper.weight_decay * param
    return new, AdamState(m, v, t)


class Adam:
    """Stateful wrapper updating ``Tensor.data`` in place from ``Tensor.grad``.

    Parameters whose ``grad`` is ``None`` after backward are skipped for that
    step (their moments are left untouched).
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, decoupled=False):
        self.params = dict(params)
        self.hyper = AdamHyper(lr, betas[0], betas[1], eps, weight_decay, decoupled)
        self.state = {k: init_state(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            try:
                p.data, self.state[name] = optimizer_step(p.data, p.grad, self.state[name], self.hyper)
            except TrainingAborted as exc:
                exc.diagnostics["param"] = name
                raise


class AdamW(Adam):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super().__init__(params, lr, betas, eps, weight_decay, decoupled=True)
