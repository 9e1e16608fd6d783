import numpy as np
import pytest

from earlyrumor.errors import DegenerateInputError
from earlyrumor.quality import diversity, diversity_post, style_similarity, style_similarity_post


def test_identical_sets_score_exactly_one():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.normal(size=int(rng.integers(1, 40)))
        k = int(rng.integers(1, 9))
        same = np.tile(v, (k, 1))
        assert style_similarity_post(same, same) == 1.0
        assert diversity_post(same) == 1.0
    assert style_similarity([same], [same]) == 1.0 and diversity([same]) == 1.0


def test_orthogonal_unit_vectors_give_one_over_k():
    for K in range(1, 21):
        assert abs(diversity_post(np.eye(K)) - 1.0 / K) < 1e-12
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    assert abs(diversity_post(Q[:5]) - 0.2) < 1e-12


def test_orthogonal_originals_give_zero_style():
    assert style_similarity_post(np.eye(4)[:2], np.eye(4)[2:]) == 0.0


def test_hand_computed_cases():
    o = np.array([[1.0, 0.0], [0.0, 1.0]])
    g = np.array([[1.0, 1.0], [1.0, 0.0]])
    r = 1 / np.sqrt(2)
    assert style_similarity_post(o, g) == pytest.approx((r + 1 + r + 0) / 4, abs=1e-12)
    three = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
    want = (3 + 2 * 0 + 4 * r) / 9
    assert diversity_post(three) == pytest.approx(want, abs=1e-12)


def test_averaging_over_posts():
    a, b = np.eye(2), np.ones((2, 2))
    assert diversity([a, b]) == pytest.approx(0.75, abs=1e-12)


def test_argument_errors():
    with pytest.raises(ValueError):
        style_similarity_post(np.zeros((0, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        style_similarity([np.ones((1, 2))], [])
    with pytest.raises(DegenerateInputError):
        diversity_post(np.array([[0.0, 0.0], [1.0, 0.0]]))
