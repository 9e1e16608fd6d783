import numpy as np
import pytest

from earlyrumor import instrument
from earlyrumor import tensor as tt
from earlyrumor.data import PostRecord, generate_synthetic_corpus, split
from earlyrumor.detector import (Detector, DetectorConfig, Example, embed_comments, embed_texts, evaluate,
                                 make_examples, predict, train_detector)
from earlyrumor.errors import ContractError
from earlyrumor.lm import Vocabulary
from earlyrumor.pipeline import build_vocabulary
from helpers import check_tensor_grads


def _examples(rng, n, vocab_size, max_comments=4):
    out = []
    for i in range(n):
        post = rng.integers(4, vocab_size, size=int(rng.integers(1, 5))).tolist()
        comments = [rng.integers(4, vocab_size, size=int(rng.integers(1, 4))).tolist()
                    for _ in range(int(rng.integers(1, max_comments + 1)))]
        out.append(Example(post, comments, int(rng.integers(0, 2)), f"p{i}"))
    return out


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("fusion", ["mcf", "mean"])
def test_detector_loss_gradient(seed, fusion):
    rng = np.random.default_rng(seed)
    det = Detector(9, DetectorConfig(d=3, seed=seed, fusion=fusion))
    batch = _examples(rng, 3, 9)
    labels = np.array([ex.label for ex in batch])
    check_tensor_grads(lambda: tt.cross_entropy(det.logits(batch), labels), list(det.params().values()))


def test_positive_scaling_keeps_predicted_class():
    rng = np.random.default_rng(1)
    det = Detector(12, DetectorConfig(d=4, seed=2))
    ex = _examples(rng, 20, 12)
    before = det.predict_proba(ex).argmax(axis=1)
    det.W_C.data *= 3.7
    det.b_C.data *= 3.7
    assert np.array_equal(det.predict_proba(ex).argmax(axis=1), before)


def test_empty_comment_sets():
    det = Detector(12, DetectorConfig(d=4))
    ex = [Example([5, 6], [], 0), Example([7], [[8]], 1)]
    with pytest.raises(ContractError, match="generate K'"):
        det.logits(ex)
    p = det.predict_proba(ex, allow_empty=True)
    assert p.shape == (2, 2) and np.allclose(p.sum(axis=1), 1.0)


def test_configuration_errors():
    with pytest.raises(ValueError):
        Detector(10, DetectorConfig(n_classes=1))
    with pytest.raises(ValueError):
        Detector(10, DetectorConfig(fusion="max"))
    with pytest.raises(ValueError):
        train_detector([], [Example([4], [[5]], 0)], 10)


def test_make_examples_counts_and_errors():
    vocab = Vocabulary(["a", "b", "c", "d"])
    recs = [PostRecord("x", "a b", ["a", "b", "c"], 0), PostRecord("y", "c", ["d"], 1)]
    ex = make_examples(recs, vocab, 2, {"x": ["b b", "c"], "y": ["a"]}, [2, 1])
    assert [len(e.comments) for e in ex] == [4, 2]
    assert ex[0].comments[2:] == [vocab.encode("b b"), vocab.encode("c")]
    with pytest.raises(ValueError, match="post y"):
        make_examples(recs, vocab, 0, {"x": ["a", "b"], "y": []}, 1)
    with pytest.raises(ValueError):
        make_examples(recs, vocab, 1, None, 1)
    with pytest.raises(ValueError):
        evaluate(Detector(len(vocab), DetectorConfig(d=4)), recs, vocab, 1, None, 2)


def test_embeddings_skip_empty_texts(caplog):
    vocab = Vocabulary(["a", "b", "c", "d"])
    det = Detector(len(vocab), DetectorConfig(d=4))
    assert embed_texts(det.encoder, vocab, ["a", "", "b c"]).shape == (2, 4)
    assert "skipping" in caplog.text
    s = embed_comments("a b", ["c", "d a"], det.encoder, vocab)
    assert s.comments.shape == (2, 4) and s.xi.shape == (2,)
    with pytest.raises(ContractError):
        embed_comments("a", [""], det.encoder, vocab)
    p = predict(det, "a b", ["c"], vocab)
    assert p.shape == (2,) and abs(p.sum() - 1) < 1e-12


def test_mean_mode_uses_mean_pooling_only():
    rng = np.random.default_rng(3)
    det = Detector(10, DetectorConfig(d=4, fusion="mean"))
    assert not any(k.startswith("fusion.") for k in det.params())
    instrument.reset()
    det.predict_proba(_examples(rng, 4, 10))
    assert instrument.snapshot().get("detector.mean_pool", 0) > 0


@pytest.fixture(scope="module")
def separable():
    records, kb = generate_synthetic_corpus(0, 200, 4, class_separation=1.0)
    vocab = build_vocabulary(records, kb)
    return records, vocab


def test_training_learns_and_is_deterministic(separable):
    records, vocab = separable
    tr = make_examples(split(records, "train"), vocab, 4)
    va = make_examples(split(records, "valid"), vocab, 4)
    cfg = DetectorConfig(d=8, max_epochs=30, patience=5, seed=4)
    a = train_detector(tr, va, len(vocab), cfg)
    b = train_detector(tr, va, len(vocab), cfg)
    assert a.history == b.history
    assert evaluate(a.detector, split(records, "test"), vocab, 4).macro_f1 > 0.9


def test_early_stopping_restores_best(separable):
    records, vocab = separable
    tr = make_examples(split(records, "train"), vocab, 4)
    va = make_examples(split(records, "valid"), vocab, 4)
    res = train_detector(tr, va, len(vocab), DetectorConfig(d=8, max_epochs=200, patience=3, seed=5))
    f1s = [h["valid_macro_f1"] for h in res.history]
    best = max(f1s)
    assert res.best_epoch == f1s.index(best) + 1  # first epoch reaching the best score
    if res.stopped_early:
        assert len(res.history) - res.best_epoch == 3
    from earlyrumor.detector import evaluate_examples
    assert evaluate_examples(res.detector, va).macro_f1 == best
