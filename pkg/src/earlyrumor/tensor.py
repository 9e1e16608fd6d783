"""Small reverse-mode autodiff over float64 numpy arrays.

The graph is built while the forward pass runs (define-by-run) and thrown away
after ``backward``. Every op checks its output for NaN/Inf so a bad value is
caught where it is produced rather than three layers later.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import DegenerateInputError, DimensionError, NonFiniteError

_GRAD_ENABLED = True

# additive bias used for masked attention keys; exp() of it underflows to 0
MASK_BIAS = -1e9


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / decoding)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents, backward):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("non-finite value produced in forward pass")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf with requires_grad."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise DimensionError("seed gradient shape does not match output")
        if not self.requires_grad:
            return

        # topological order (the tape), iterative to avoid recursion limits
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError("non-finite gradient reached a leaf")
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators --------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def tensor(x, requires_grad=False, name=None):
    return Tensor(x, requires_grad=requires_grad, name=name)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    return Tensor._make(ad / bd, (a, b),
                        lambda g: (_unbroadcast(g / bd, ad.shape),
                                   _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def exp(a):
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return Tensor._make(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    m = a.data > 0
    return Tensor._make(a.data * m, (a,), lambda g: (g * m,))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def gradient_reverse(x, scale=1.0):
    """Identity on the way forward, gradient times -scale on the way back."""
    x = _lift(x)
    return Tensor._make(x.data.copy(), (x,), lambda g: (-scale * g,))


# -- reductions / shape ------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1, ax2):
    return Tensor._make(np.swapaxes(a.data, ax1, ax2), (a,),
                        lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, idx):
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), bw)


def take_rows(table, ids):
    """Embedding lookup: ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("token id out of range for embedding table")
    shape = table.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return Tensor._make(table.data[ids], (table,), bw)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# -- linear algebra ----------------------------------------------------------------

def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul expects operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), bw)


# -- softmax family ------------------------------------------------------------------

def _softmax_np(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1):
    x = _lift(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    s = _softmax_np(x.data, axis)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), bw)


def log_softmax(x, axis=-1):
    x = _lift(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise DimensionError("log_softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), bw)


def cross_entropy(logits, labels, weights=None):
    """Cross-entropy of ``logits`` (n x C) against integer ``labels``.

    Without ``weights`` this is the batch mean of -log softmax[label].
    With ``weights`` (length n) it is the weighted *sum*; callers that want a
    per-sequence token mean pass pre-normalised weights.
    """
    logits = _lift(logits)
    if logits.ndim != 2:
        raise DimensionError("cross_entropy expects 2-D logits")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionError("one label per logit row required")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise IndexError("label out of range")
    if weights is None:
        w = np.full(n, 1.0 / max(n, 1))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise DimensionError("one weight per row required")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    nll = lse - z[rows, labels]
    value = float(np.dot(w, nll))

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (w[:, None] * g),)

    return Tensor._make(np.array(value), (logits,), bw)


# -- similarity / attention -------------------------------------------------------

def cosine_similarity(a, b):
    """Cosine of two 1-D tensors. Zero-norm inputs are rejected."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("cosine_similarity expects two vectors of equal length")
    aa = float(a.data @ a.data)
    bb = float(b.data @ b.data)
    if aa == 0.0 or bb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    na, nb = math.sqrt(aa), math.sqrt(bb)
    dot = float(a.data @ b.data)
    # sqrt(aa * bb) keeps cos(a, a) == 1.0 exactly
    c = dot / math.sqrt(aa * bb)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g * (bd / (na * nb) - c * ad / (na * na))
        gb = g * (ad / (na * nb) - c * bd / (nb * nb))
        return ga, gb

    return Tensor._make(np.array(min(1.0, max(-1.0, c))), (a, b), bw)


def rowwise_cosine(a, b, tiny=1e-300):
    """Cosine along the last axis with broadcasting.

    ``tiny`` only matters for all-zero (padded) rows, which callers mask out.
    """
    a, b = _lift(a), _lift(b)
    dot = tsum(a * b, axis=-1)
    aa = tsum(a * a, axis=-1)
    bb = tsum(b * b, axis=-1)
    return dot / sqrt(aa * bb + tiny)


def attention_weights(q, k, key_mask=None):
    d = q.shape[-1]
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, MASK_BIAS)
        scores = scores + np.expand_dims(bias, -2)
    return softmax(scores, axis=-1)


def self_attention(x, wq, wk, wv, key_mask=None, return_weights=False):
    """Single-head scaled dot-product self-attention over rows of ``x``.

    ``x`` is (..., n, d); ``key_mask`` (..., n) marks rows that may be attended to.
    Each output row is a convex combination of the value rows.
    """
    x = _lift(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise DimensionError("self_attention needs at least one row")
    if x.shape[-1] != wq.shape[0]:
        raise DimensionError("input width does not match projection")
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    w = attention_weights(q, k, key_mask)
    out = matmul(w, v)
    return (out, w) if return_weights else out


def masked_mean(x, mask, axis=-2):
    """Mean of ``x`` over ``axis`` counting only rows where ``mask`` is true."""
    m = np.asarray(mask, dtype=np.float64)
    denom = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    weights = m / denom
    return tsum(x * np.expand_dims(weights, -1), axis=axis)
