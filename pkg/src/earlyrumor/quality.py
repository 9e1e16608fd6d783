"""Comment-quality scores: style similarity (Sty.) and redundancy (Div., lower is more diverse)."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError


def _cosine_matrix(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    aa = (a * a).sum(axis=-1)
    bb = (b * b).sum(axis=-1)
    if (aa == 0).any() or (bb == 0).any():
        raise DegenerateInputError("cosine of a zero-norm embedding")
    # same summation path for dots and norms, so identical rows give exactly 1.0
    dots = (a[:, None, :] * b[None, :, :]).sum(axis=-1)
    c = dots / np.sqrt(np.outer(aa, bb))
    return np.clip(c, -1.0, 1.0)


def style_similarity_post(originals, generated):
    """Mean cosine over all (original, generated) pairs of one post."""
    if len(originals) == 0 or len(generated) == 0:
        raise ValueError("style similarity needs non-empty original and generated sets")
    return float(_cosine_matrix(originals, generated).mean())


def diversity_post(generated):
    """Mean cosine over all ordered pairs of generated comments, self-pairs included."""
    if len(generated) == 0:
        raise ValueError("diversity needs at least one generated comment")
    return float(_cosine_matrix(generated, generated).mean())


def style_similarity(originals, generated):
    """Sty. averaged over posts; arguments are per-post lists of (m x d) / (k x d) arrays."""
    if len(originals) != len(generated) or not originals:
        raise ValueError("one original and one generated set per post required")
    return float(np.mean([style_similarity_post(o, g) for o, g in zip(originals, generated)]))


def diversity(generated):
    """Div. averaged over posts; argument is a per-post list of (k x d) arrays."""
    if not generated:
        raise ValueError("diversity needs at least one post")
    return float(np.mean([diversity_post(g) for g in generated]))
