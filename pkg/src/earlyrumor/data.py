"""Post records, JSON-lines IO and a synthetic rumour corpus generator."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .knowledge import KnowledgeBase
from .lm import tokenize

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


@dataclass
class PostRecord:
    id: str
    text: str
    comments: list = field(default_factory=list)
    label: int = 0
    split: str = "train"

    def to_dict(self):
        return asdict(self)


class DatasetError(ValueError):
    pass


def _validate(obj, lineno, n_classes):
    where = f"line {lineno}"
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    for key, typ in (("id", str), ("text", str), ("comments", list), ("label", int), ("split", str)):
        if key not in obj:
            raise DatasetError(f"{where}: missing field {key!r}")
        if not isinstance(obj[key], typ) or (typ is int and isinstance(obj[key], bool)):
            raise DatasetError(f"{where}: field {key!r} has the wrong type")
    if obj["split"] not in SPLITS:
        raise DatasetError(f"{where}: unknown split {obj['split']!r}")
    if obj["label"] < 0 or (n_classes is not None and obj["label"] >= n_classes):
        raise DatasetError(f"{where}: label {obj['label']} out of range")
    if not all(isinstance(c, str) for c in obj["comments"]):
        raise DatasetError(f"{where}: comments must be strings")
    if obj["split"] == "train" and not obj["comments"]:
        raise DatasetError(f"{where}: training records need at least one comment")
    return PostRecord(obj["id"], obj["text"], list(obj["comments"]), obj["label"], obj["split"])


def load_dataset(path, n_classes=None):
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            rec = _validate(obj, lineno, n_classes)
            if rec.id in seen:
                raise DatasetError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        log.warning("dataset %s is empty", path)
    return records


def save_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def split(records, name):
    return [r for r in records if r.split == name]


def dataset_stats(records):
    """Per-split sample counts and mean comments per sample."""
    out = {}
    for s in SPLITS:
        rs = split(records, s)
        mean = sum(len(r.comments) for r in rs) / len(rs) if rs else 0.0
        out[s] = {"num": len(rs), "avg_comments": round(mean, 2)}
    return out


# -- synthetic corpus ---------------------------------------------------------------

_ONSETS = "b d f g k l m n p r s t v z".split()
_NUCLEI = "a e i o u".split()


def _make_words(rng, n, taken):
    words = []
    while len(words) < n:
        k = int(rng.integers(2, 4))
        w = "".join(rng.choice(_ONSETS) + rng.choice(_NUCLEI) for _ in range(k))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass
class CorpusSpec:
    """Knobs of the generator that are not part of the public signature."""
    post_len: tuple = (8, 14)
    comment_len: tuple = (4, 10)
    informative_rate: float = 0.3
    stance_token_rate: float = 0.4
    stance_first: float = 0.1   # chance that the first comment takes a stance
    stance_last: float = 0.8    # ... and the last one
    knowledge_comment_rate: float = 0.25  # chance that a comment on an entity post cites the entity
    knowledge_token_rate: float = 0.6
    n_entities: int = 12
    split_fractions: tuple = (0.6, 0.2, 0.2)


def generate_synthetic_corpus(seed, N, M, vocab_size=120, n_classes=2, class_separation=0.5,
                              kb_entity_rate=0.4, spec=None):
    """Posts with class-conditional topic words and comments that drift from echo to stance.

    Each informative token comes from the true class's pool with probability
    ``s + (1 - s) / C`` (``s`` = class_separation) and from another class's pool
    otherwise, so ``s = 1`` gives disjoint class vocabularies. Early comments
    mostly echo post words; later ones increasingly carry class stance words.
    A fraction ``kb_entity_rate`` of posts mention a knowledge-base entity
    whose description leans towards the post's class; some comments on those
    posts cite words from the entity's description.

    Returns ``(records, knowledge_base)``.
    """
    if N <= 0 or M <= 0 or vocab_size <= 0 or n_classes < 2:
        raise ValueError("N, M and vocab_size must be positive and n_classes >= 2")
    if not 0.0 < class_separation <= 1.0:
        raise ValueError("class_separation must lie in (0, 1]")
    spec = spec or CorpusSpec()
    rng = np.random.default_rng(seed)
    C = n_classes
    taken = set()
    n_topic = max(4, vocab_size // (5 * C))
    n_stance = max(3, vocab_size // (8 * C))
    topic = [_make_words(rng, n_topic, taken) for _ in range(C)]
    stance = [_make_words(rng, n_stance, taken) for _ in range(C)]
    facts = _make_words(rng, max(4, vocab_size // 12), taken)
    n_ent = spec.n_entities
    ent_words = _make_words(rng, n_ent + 1, taken)
    used = sum(len(p) for p in topic + stance) + len(facts) + len(ent_words)
    generic = _make_words(rng, max(8, vocab_size - used), taken)

    # entities: single words plus one two-word form whose tail is itself an entity
    names = ent_words[:n_ent]
    names[0] = f"{ent_words[n_ent]} {ent_words[1]}"
    ent_class = [i % C for i in range(n_ent)]
    kb = KnowledgeBase()
    ent_tokens = []
    for i, name in enumerate(names):
        c = ent_class[i]
        sents = []
        for _ in range(2):
            k = int(rng.integers(4, 8))
            words = [rng.choice(stance[c]) if rng.random() < 0.5 else rng.choice(facts) for _ in range(k)]
            sents.append(" ".join(words))
        kb.add(name, ". ".join(sents) + ".")
        ent_tokens.append([w for sent in sents for w in sent.split()])

    pi_own = class_separation + (1.0 - class_separation) / C

    def class_word(pools, y):
        c = y if rng.random() < pi_own else int(rng.choice([k for k in range(C) if k != y]))
        return str(rng.choice(pools[c]))

    labels = np.arange(N) % C
    rng.shuffle(labels)
    n_train = int(round(spec.split_fractions[0] * N))
    n_valid = int(round(spec.split_fractions[1] * N))
    records = []
    for i in range(N):
        y = int(labels[i])
        n = int(rng.integers(spec.post_len[0], spec.post_len[1] + 1))
        informative = rng.random(n) < spec.informative_rate
        if not informative.any():
            informative[int(rng.integers(0, n))] = True
        toks = [class_word(topic, y) if inf else str(rng.choice(generic)) for inf in informative]
        entity = None
        if rng.random() < kb_entity_rate:
            same = [e for e in range(n_ent) if ent_class[e] == y]
            e = int(rng.choice(same)) if rng.random() < pi_own else int(rng.integers(0, n_ent))
            toks.insert(int(rng.integers(0, len(toks) + 1)), names[e])
            entity = e
        text = " ".join(toks)
        post_words = tokenize(text)
        comments = []
        for j in range(M):
            frac = j / (M - 1) if M > 1 else 0.0
            p_stance = spec.stance_first + (spec.stance_last - spec.stance_first) * frac
            m = int(rng.integers(spec.comment_len[0], spec.comment_len[1] + 1))
            if entity is not None and rng.random() < spec.knowledge_comment_rate:
                ctoks = [str(rng.choice(ent_tokens[entity])) if rng.random() < spec.knowledge_token_rate
                         else str(rng.choice(generic)) for _ in range(m)]
            elif rng.random() < p_stance:
                ctoks = [class_word(stance, y) if rng.random() < spec.stance_token_rate else str(rng.choice(generic))
                         for _ in range(m)]
            else:
                k = int(rng.integers(1, 4))
                ctoks = [str(w) for w in rng.choice(post_words, size=k)] + \
                        [str(rng.choice(generic)) for _ in range(m - k)]
                rng.shuffle(ctoks)
            comments.append(" ".join(ctoks))
        sp = "train" if i < n_train else ("valid" if i < n_train + n_valid else "test")
        records.append(PostRecord(f"p{i:05d}", text, comments, y, sp))
    return records, kb


def unigram_oracle_accuracy(records, use_comments=False, n_classes=None):
    """Multinomial naive Bayes on unigram counts: fit on train, score on test."""
    def toks(r):
        t = tokenize(r.text)
        if use_comments:
            t += [w for c in r.comments for w in tokenize(c)]
        return t

    train, test = split(records, "train"), split(records, "test")
    C = n_classes or (max(r.label for r in records) + 1)
    counts = [Counter() for _ in range(C)]
    prior = np.zeros(C)
    for r in train:
        counts[r.label].update(toks(r))
        prior[r.label] += 1
    vocab = set().union(*counts)
    V = len(vocab) + 1
    totals = [sum(c.values()) for c in counts]
    logprior = np.log((prior + 1) / (prior.sum() + C))
    correct = 0
    for r in test:
        scores = logprior.copy()
        for w in toks(r):
            for c in range(C):
                scores[c] += np.log((counts[c][w] + 1) / (totals[c] + V))
        correct += int(np.argmax(scores) == r.label)
    return correct / len(test) if test else 0.0
