import math

import numpy as np
import pytest

from earlyrumor.errors import TrainingAborted
from earlyrumor.optim import Adam, AdamHyper, AdamW, init_state, optimizer_step
from earlyrumor.tensor import Tensor


def test_zero_gradient_leaves_params_unchanged():
    p = np.array([1.0, -2.0])
    new, state = optimizer_step(p, np.zeros(2), init_state(p), AdamHyper(lr=0.1))
    assert np.array_equal(new, p) and state.t == 1


def test_zero_gradient_applies_only_decoupled_decay():
    p = np.array([1.0, -2.0])
    new, _ = optimizer_step(p, np.zeros(2), init_state(p), AdamHyper(lr=0.1, weight_decay=0.01, decoupled=True))
    assert np.allclose(new, p * (1 - 0.1 * 0.01), atol=1e-15)


def test_descent_on_square():
    w = np.array([1.0])
    new, _ = optimizer_step(w, 2 * w, init_state(w), AdamHyper(lr=0.1))
    assert new[0] < 1.0


def test_two_steps_match_hand_recurrence():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    w, g1 = 0.7, 0.3
    hyper = AdamHyper(lr, b1, b2, eps)
    p, s = optimizer_step(np.array([w]), np.array([g1]), init_state(np.array([w])), hyper)
    # step 1: bias-corrected moments reduce to g and g^2
    w1 = w - lr * g1 / (abs(g1) + eps)
    assert p[0] == pytest.approx(w1, abs=1e-15)
    g2 = -0.2
    p, s = optimizer_step(p, np.array([g2]), s, hyper)
    m = b1 * (1 - b1) * g1 + (1 - b1) * g2
    v = b2 * (1 - b2) * g1 ** 2 + (1 - b2) * g2 ** 2
    w2 = w1 - lr * (m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps)
    assert p[0] == pytest.approx(w2, abs=1e-15) and s.t == 2


def test_coupled_decay_enters_gradient():
    p = np.array([2.0])
    new, s = optimizer_step(p, np.zeros(1), init_state(p), AdamHyper(lr=0.1, weight_decay=0.5))
    assert s.m[0] == pytest.approx(0.1 * 1.0) and new[0] < 2.0


def test_non_finite_gradient_aborts_with_diagnostics():
    p = np.zeros(2)
    with pytest.raises(TrainingAborted) as info:
        optimizer_step(p, np.array([np.nan, 0.0]), init_state(p), AdamHyper())
    assert info.value.diagnostics["step"] == 1


def test_wrapper_names_offending_param_and_skips_missing_grads():
    a, b = Tensor([1.0], requires_grad=True), Tensor([1.0], requires_grad=True)
    opt = AdamW({"a": a, "b": b}, lr=0.1)
    a.grad = np.array([1.0])
    opt.step()
    assert a.data[0] < 1.0 and b.data[0] == 1.0
    a.grad = np.array([np.inf])
    with pytest.raises(TrainingAborted) as info:
        opt.step()
    assert info.value.diagnostics["param"] == "a"


def test_adam_minimises_quadratic():
    w = Tensor([3.0, -2.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
    assert np.abs(w.data).max() < 1e-2
