"""Stance split and controversy feature for one hand-made post.

Run: python demos/fusion_walkthrough.py
"""
import numpy as np

from earlyrumor.fusion import FusionParams, controversy_feature, stance_split, stance_weights

rng = np.random.default_rng(0)
post = rng.normal(size=6)
agree = post + 0.1 * rng.normal(size=(3, 6))    # close to the post
disagree = -post + 0.1 * rng.normal(size=(3, 6))  # pointing away from it
comments = np.concatenate([agree, disagree])

xi = stance_weights(comments, post).data  # 1 - cosine: 0 agrees, 2 opposes
print("xi    ", np.round(xi, 3))
plus, minus = stance_split(xi)
print("plus  ", plus, "(high xi)")
print("minus ", minus, "(low xi)")

fp = FusionParams(6, seed=1)
e_c = controversy_feature(comments, post, fp)
print("e_c   ", np.round(e_c.data, 3))
shuffled = controversy_feature(comments[::-1], post, fp)
print("same after reordering comments:", np.allclose(e_c.data, shuffled.data))
