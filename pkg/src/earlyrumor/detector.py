"""Veracity detector: post encoding, controversy feature, linear classifier, training loop."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import instrument
from . import tensor as tt
from .errors import ContractError, NonFiniteError, TrainingAborted
from .fusion import CommentEmbeddingSet, FusionParams, controversy_feature_batch
from .lm import PAD, pad_batch
from .metrics import metrics_report
from .optim import Adam
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

MAX_TOKENS = 32


class TextEncoder:
    """Mean over tokens of ``tanh(E[token] @ W + b)``; one d-vector per text."""

    def __init__(self, vocab_size, d=32, seed=0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.emb = Tensor(rng.normal(0.0, 1.0, (vocab_size, d)), requires_grad=True, name="enc.emb")
        self.W = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)), requires_grad=True, name="enc.W")
        self.b = Tensor(np.zeros(d), requires_grad=True, name="enc.b")

    def params(self):
        return {"enc.emb": self.emb, "enc.W": self.W, "enc.b": self.b}

    def __call__(self, ids, mask):
        """(n x T) padded ids with mask -> (n x d)."""
        x = tt.take_rows(self.emb, ids)
        h = tt.tanh(x @ self.W + self.b)
        return tt.masked_mean(h, mask)


def embed_texts(encoder, vocab, texts):
    """Detector-side embeddings (n x d) of non-empty texts; empty texts are skipped with a warning."""
    seqs = []
    for t in texts:
        ids = vocab.encode(t)[:MAX_TOKENS]
        if ids:
            seqs.append(ids)
        else:
            log.warning("skipping empty text")
    if not seqs:
        return np.zeros((0, encoder.d))
    with no_grad():
        out = []
        for start in range(0, len(seqs), 512):
            ids, mask = pad_batch(seqs[start:start + 512])
            out.append(encoder(ids, mask).data)
    return np.concatenate(out)


def embed_comments(post_text, comment_texts, encoder, vocab):
    """Post embedding, comment embeddings and stance weights for one post."""
    post = embed_texts(encoder, vocab, [post_text])
    comments = embed_texts(encoder, vocab, comment_texts)
    if post.shape[0] == 0 or comments.shape[0] == 0:
        raise ContractError("need a non-empty post and at least one non-empty comment")
    return CommentEmbeddingSet.from_embeddings(post[0], comments)


@dataclass
class Example:
    post: list
    comments: list
    label: int
    post_id: str = ""


def make_examples(records, vocab, n_original, generated=None, n_generated=0):
    """Token-id examples: the first ``n_original`` real comments plus ``n_generated`` generated ones.

    ``n_original`` / ``n_generated`` are ints or per-record lists;
    ``generated`` maps post id -> list of comment texts.
    """
    if n_generated and generated is None:
        raise ValueError("generated comments requested but no generator output given")
    k_orig = _per_record(n_original, records)
    k_gen = _per_record(n_generated, records)
    out = []
    for r, ko, kg in zip(records, k_orig, k_gen):
        texts = list(r.comments[:ko])
        if kg:
            avail = generated.get(r.id, [])
            if len(avail) < kg:
                raise ValueError(f"post {r.id}: {kg} generated comments needed, {len(avail)} available")
            texts += list(avail[:kg])
        comments = [ids for ids in (vocab.encode(t)[:MAX_TOKENS] for t in texts) if ids]
        post = vocab.encode(r.text)[:MAX_TOKENS] or [PAD]
        out.append(Example(post, comments, r.label, r.id))
    return out


def _per_record(k, records):
    return [k] * len(records) if isinstance(k, (int, np.integer)) else list(k)


@dataclass
class DetectorConfig:
    n_classes: int = 2
    d: int = 32
    lr: float = 5e-3
    batch_size: int = 64
    patience: int = 10
    max_epochs: int = 80
    weight_decay: float = 0.0
    seed: int = 1
    fusion: str = "mcf"   # "mcf" (controversy fusion) or "mean" (mean-pooled comments)
    tau: float | None = None


class Detector:
    """``softmax([e_p; e_c] @ W_C + b_C)``."""

    def __init__(self, vocab_size, cfg):
        if cfg.n_classes < 2:
            raise ValueError("need at least two classes")
        if cfg.fusion not in ("mcf", "mean"):
            raise ValueError(f"unknown fusion mode {cfg.fusion!r}")
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d
        self.cfg = cfg
        self.encoder = TextEncoder(vocab_size, d, seed=int(rng.integers(2**31)))
        self.fusion = FusionParams(d, seed=int(rng.integers(2**31)))
        self.W_C = Tensor(rng.normal(0.0, 1.0 / math.sqrt(2 * d), (2 * d, cfg.n_classes)),
                          requires_grad=True, name="cls.W_C")
        self.b_C = Tensor(np.zeros(cfg.n_classes), requires_grad=True, name="cls.b_C")

    def params(self):
        p = {**self.encoder.params(), "cls.W_C": self.W_C, "cls.b_C": self.b_C}
        if self.cfg.fusion == "mcf":
            p.update(self.fusion.params())
        return p

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params().items()}

    def load_state_dict(self, arrays):
        for k, t in self.params().items():
            t.data = np.array(arrays[k], dtype=np.float64)

    def comment_feature(self, hc, ep, cmask):
        if self.cfg.fusion == "mcf":
            return controversy_feature_batch(hc, ep, cmask, self.fusion, self.cfg.tau)
        instrument.hit("detector.mean_pool")
        return tt.masked_mean(hc, cmask)

    def logits(self, examples, allow_empty=False):
        """(B x C) logits. Examples without comments are an error unless ``allow_empty``."""
        if not allow_empty and any(not ex.comments for ex in examples):
            raise ContractError("post has no comments; generate K' comments for it first")
        pid, pmask = pad_batch([ex.post for ex in examples])
        ep = self.encoder(pid, pmask)
        B, d = len(examples), self.cfg.d
        flat = [c for ex in examples for c in ex.comments]
        m = max(1, max(len(ex.comments) for ex in examples))
        cmask = np.zeros((B, m), dtype=bool)
        index = np.zeros((B, m), dtype=np.int64)
        pos = 0
        for b, ex in enumerate(examples):
            k = len(ex.comments)
            cmask[b, :k] = True
            index[b, :k] = np.arange(pos, pos + k)
            pos += k
        if flat:
            cid, cm = pad_batch(flat)
            hflat = self.encoder(cid, cm)
            hc = tt.take_rows(hflat, index)
        else:
            hc = Tensor(np.zeros((B, m, d)))
        ec = self.comment_feature(hc, ep, cmask)
        return tt.concat([ep, ec], axis=-1) @ self.W_C + self.b_C

    def predict_proba(self, examples, allow_empty=False, batch_size=256):
        out = []
        with no_grad():
            for start in range(0, len(examples), batch_size):
                z = self.logits(examples[start:start + batch_size], allow_empty).data
                z = z - z.max(axis=1, keepdims=True)
                p = np.exp(z)
                out.append(p / p.sum(axis=1, keepdims=True))
        return np.concatenate(out) if out else np.zeros((0, self.cfg.n_classes))


def predict(detector, post_text, comment_texts, vocab):
    """Class probabilities for one post and its (original + generated) comments."""
    comments = [ids for ids in (vocab.encode(t)[:MAX_TOKENS] for t in comment_texts) if ids]
    ex = Example(vocab.encode(post_text)[:MAX_TOKENS] or [PAD], comments, 0)
    return detector.predict_proba([ex])[0]


def evaluate_examples(detector, examples, allow_empty=False):
    probs = detector.predict_proba(examples, allow_empty)
    return metrics_report([ex.label for ex in examples], probs, detector.cfg.n_classes)


def evaluate(detector, records, vocab, n_original, generated=None, n_generated=0, allow_empty=False):
    """Scores on ``records`` using ``n_original`` real plus ``n_generated`` generated comments each."""
    if n_generated < 0:
        raise ValueError("n_generated must be >= 0")
    if n_generated > 0 and generated is None:
        raise ValueError("a generator output is required when n_generated > 0")
    examples = make_examples(records, vocab, n_original, generated, n_generated)
    return evaluate_examples(detector, examples, allow_empty)


@dataclass
class TrainResult:
    detector: Detector
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def train_detector(train, valid, vocab_size, cfg=None, allow_empty=False):
    """Adam on the batch-mean cross-entropy with early stopping on validation macro F1.

    Stops once ``cfg.patience`` consecutive epochs bring no strict improvement
    (or at ``cfg.max_epochs``) and returns the best-validation parameters.
    """
    cfg = cfg or DetectorConfig()
    if not train or not valid:
        raise ValueError("train and valid splits must be non-empty")
    instrument.hit("detector.train")
    det = Detector(vocab_size, cfg)
    params = det.params()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 104729)
    labels = np.array([ex.label for ex in train])
    best_f1, best_state, best_epoch = -1.0, det.state_dict(), 0
    history, since_best = [], 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        total, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                loss = tt.cross_entropy(det.logits([train[i] for i in idx], allow_empty), labels[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
            except (NonFiniteError, TrainingAborted) as exc:
                det.load_state_dict(best_state)
                diag = dict(getattr(exc, "diagnostics", {}))
                diag.update({"epoch": epoch, "batch_start": int(start)})
                raise TrainingAborted(f"detector training aborted: {exc}", diag) from exc
            total += float(loss.data)
            n_batches += 1
        f1 = evaluate_examples(det, valid, allow_empty).macro_f1
        history.append({"epoch": epoch, "train_loss": total / n_batches, "valid_macro_f1": f1})
        if f1 > best_f1:
            best_f1, best_state, best_epoch, since_best = f1, det.state_dict(), epoch, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stopped = True
                break
    det.load_state_dict(best_state)
    return TrainResult(det, history, best_epoch, stopped)


def clone(detector):
    return copy.deepcopy(detector)
