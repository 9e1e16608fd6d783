"""Finite-difference gradient checks shared by the test modules."""
import numpy as np

STEP = 1e-5
TOL = 1e-4
# central differences at STEP resolve gradients only down to ~1e-11 per entry;
# norms below this floor are compared on an absolute scale
FLOOR = 1e-6


def numeric_grad(f, arrays, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of each array (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + step
            hi = f()
            a[i] = old - step
            lo = f()
            a[i] = old
            g[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), FLOOR)
    return float(np.linalg.norm(a - n) / denom)


def check_tensor_grads(loss_fn, tensors, tol=TOL):
    """Compare backward() against central differences for the given leaf tensors.

    ``loss_fn`` rebuilds the graph from the tensors' current ``.data`` and
    returns a scalar Tensor. Returns the worst relative error.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_grad(lambda: float(loss_fn().data), [t.data for t in tensors])
    worst = max(rel_error(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"relative gradient error {worst:.3e}"
    return worst
