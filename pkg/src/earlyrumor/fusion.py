"""Stance split of comments and the two-camp controversy feature.

Comments are split by their stance weight ``xi = 1 - cos(comment, post)``
against a threshold (the median by default). Each camp is pooled with its own
self-attention and the two pooled vectors are combined as
``[h+; h+ * h-; h+ - h-; h-] @ W_F + b_F``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class CommentEmbeddingSet:
    post: np.ndarray        # (d,)
    comments: np.ndarray    # (m, d)
    xi: np.ndarray          # (m,)

    @classmethod
    def from_embeddings(cls, post, comments):
        post = np.asarray(post, dtype=np.float64)
        comments = np.atleast_2d(np.asarray(comments, dtype=np.float64))
        if comments.shape[0] < 1:
            raise ContractError("at least one comment embedding is required")
        xi = np.array([1.0 - float(tt.cosine_similarity(c, post).data) for c in comments])
        return cls(post, comments, xi)


def stance_weights(comments, post):
    """``1 - cos(h_j, e_p)`` for each comment row (differentiable)."""
    return 1.0 - tt.rowwise_cosine(comments, post)


def stance_split(xi, tau=None):
    """Indices ``(plus, minus)``: ``xi > tau`` goes to plus, the rest (ties included) to minus.

    ``tau`` defaults to the median. If a side comes out empty the most extreme
    element of the other side moves over (largest ``xi`` to plus, smallest to
    minus, lowest index on ties). A single comment is placed on both sides.
    """
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.size
    if n == 0:
        raise ContractError("stance split of an empty comment set")
    if n == 1:
        return [0], [0]
    tau = float(np.median(xi)) if tau is None else float(tau)
    plus = [j for j in range(n) if xi[j] > tau]
    minus = [j for j in range(n) if not xi[j] > tau]
    if not plus:
        j = int(np.argmax(xi))
        minus.remove(j)
        plus = [j]
    elif not minus:
        j = int(np.argmin(xi))
        plus.remove(j)
        minus = [j]
    return plus, minus


class AttentionParams:
    def __init__(self, d, rng, prefix):
        s = 1.0 / math.sqrt(d)
        self.wq = Tensor(rng.normal(0.0, s, (d, d)), requires_grad=True, name=prefix + "wq")
        self.wk = Tensor(rng.normal(0.0, s, (d, d)), requires_grad=True, name=prefix + "wk")
        self.wv = Tensor(rng.normal(0.0, s, (d, d)), requires_grad=True, name=prefix + "wv")
        self.prefix = prefix

    def params(self):
        return {self.prefix + "wq": self.wq, self.prefix + "wk": self.wk, self.prefix + "wv": self.wv}


class FusionParams:
    """Independent attention sets for the two camps and the 4d -> d projection."""

    def __init__(self, d, seed=0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.plus = AttentionParams(d, rng, "fusion.plus.")
        self.minus = AttentionParams(d, rng, "fusion.minus.")
        self.W_F = Tensor(rng.normal(0.0, 1.0 / math.sqrt(4 * d), (4 * d, d)), requires_grad=True, name="fusion.W_F")
        self.b_F = Tensor(np.zeros(d), requires_grad=True, name="fusion.b_F")

    def params(self):
        return {**self.plus.params(), **self.minus.params(), "fusion.W_F": self.W_F, "fusion.b_F": self.b_F}


def pool_subset(rows, xi, att, mask=None):
    """Scale rows by ``xi``, self-attend, then average the (unmasked) outputs.

    ``rows`` is (..., m, d) and ``xi`` (..., m); ``mask`` marks the members.
    """
    rows, xi = tt._lift(rows), tt._lift(xi)
    if mask is None:
        if rows.shape[-2] < 1:
            raise ContractError("cannot pool an empty comment subset")
        mask = np.ones(rows.shape[:-1], dtype=bool)
    x = rows * tt.reshape(xi, xi.shape + (1,))
    out = tt.self_attention(x, att.wq, att.wk, att.wv, key_mask=mask)
    return tt.masked_mean(out, mask)


def fuse(h_plus, h_minus, fp):
    """Controversy feature ``[h+; h+ * h-; h+ - h-; h-] @ W_F + b_F``."""
    h_plus, h_minus = tt._lift(h_plus), tt._lift(h_minus)
    if h_plus.shape != h_minus.shape or h_plus.shape[-1] != fp.d:
        raise DimensionError("fuse expects two vectors of the fusion width")
    z = tt.concat([h_plus, h_plus * h_minus, h_plus - h_minus, h_minus], axis=-1)
    if z.ndim == 1:
        return tt.reshape(tt.reshape(z, (1, 4 * fp.d)) @ fp.W_F, (fp.d,)) + fp.b_F
    return z @ fp.W_F + fp.b_F


def controversy_feature(comments, post, fp, tau=None):
    """``e_c`` for one post: comments (m x d), post (d)."""
    comments, post = tt._lift(comments), tt._lift(post)
    xi = stance_weights(comments, post)
    plus, minus = stance_split(xi.data, tau)
    hp = pool_subset(comments[plus], xi[plus], fp.plus)
    hm = pool_subset(comments[minus], xi[minus], fp.minus)
    return fuse(hp, hm, fp)


def split_masks(xi, mask, tau=None):
    """Batched stance split: boolean (B x m) membership masks for both camps."""
    xi = np.asarray(xi)
    plus = np.zeros(xi.shape, dtype=bool)
    minus = np.zeros(xi.shape, dtype=bool)
    for b in range(xi.shape[0]):
        idx = np.flatnonzero(mask[b])
        if idx.size == 0:
            continue
        p, m = stance_split(xi[b, idx], tau)
        plus[b, idx[p]] = True
        minus[b, idx[m]] = True
    return plus, minus


def controversy_feature_batch(comments, post, mask, fp, tau=None):
    """Batched ``e_c``: comments (B x m x d) with membership mask (B x m), posts (B x d).

    Rows without any comment get a zero feature.
    """
    comments, post = tt._lift(comments), tt._lift(post)
    B = comments.shape[0]
    m = np.asarray(mask, dtype=np.float64)[..., None]
    # padded slots get a constant stand-in so their cosine (masked anyway) stays well defined
    safe = comments * m + (1.0 - m)
    xi = stance_weights(safe, tt.reshape(post, (B, 1, post.shape[-1])))
    xi = xi * np.asarray(mask, dtype=np.float64)
    plus, minus = split_masks(xi.data, mask, tau)
    hp = pool_subset(comments, xi, fp.plus, plus)
    hm = pool_subset(comments, xi, fp.minus, minus)
    present = np.asarray(mask).any(axis=1).astype(np.float64)[:, None]
    return fuse(hp, hm, fp) * present
