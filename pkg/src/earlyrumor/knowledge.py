"""Entity-knowledge comments: dictionary entity matching plus a template summariser."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

from . import instrument
from .lm import tokenize

log = logging.getLogger(__name__)


class KnowledgeBase:
    """Case-folded surface form -> (surface form, description)."""

    def __init__(self, entries=()):
        self._entries = {}
        for surface, description in entries:
            self.add(surface, description)

    def add(self, surface, description):
        key = " ".join(tokenize(surface))
        if not key:
            raise ValueError("empty entity surface form")
        if not description or not description.strip():
            raise ValueError(f"empty description for entity {surface!r}")
        if key in self._entries:
            raise ValueError(f"duplicate entity {surface!r}")
        self._entries[key] = (surface, description)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, surface):
        return " ".join(tokenize(surface)) in self._entries

    def description(self, surface):
        return self._entries[" ".join(tokenize(surface))][1]

    def items(self):
        return [(s, d) for s, d in self._entries.values()]

    @property
    def max_span(self):
        return max((len(k.split()) for k in self._entries), default=0)

    def lookup(self, key):
        return self._entries.get(key)

    @classmethod
    def load(cls, path):
        kb = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    kb.add(obj["entity"], obj["description"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad knowledge-base line ({exc})") from exc
        return kb

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for s, d in self.items():
                fh.write(json.dumps({"entity": s, "description": d}, ensure_ascii=False) + "\n")


@dataclass
class KnowledgeSample:
    post_id: str
    source_post_text: str
    comment: str
    matched_entities: list = field(default_factory=list)

    def to_dict(self):
        return {"post_id": self.post_id, "post": self.source_post_text,
                "comment": self.comment, "entities": list(self.matched_entities)}


def extract_entities(post_text, kb):
    """Left-to-right, longest-first, non-overlapping dictionary matches."""
    toks = tokenize(post_text)
    span = kb.max_span
    found = []
    i = 0
    while i < len(toks):
        for n in range(min(span, len(toks) - i), 0, -1):
            hit = kb.lookup(" ".join(toks[i:i + n]))
            if hit is not None:
                found.append(hit[0])
                i += n
                break
        else:
            i += 1
    return found


def _sentences(text):
    return [tokenize(s) for s in re.split(r"[.!?]+", text) if tokenize(s)]


def length_band(target_len):
    lo = max(1, math.ceil(0.75 * target_len))
    hi = max(lo, math.floor(1.25 * target_len))
    return lo, hi


def summarize_descriptions(entities, kb, target_len_tokens):
    """Concatenate descriptions (first-occurrence order) and fit them into the length band.

    Whole sentences are added while they fit; a description that is still too
    short is padded by cycling its own sentences, and a single over-long
    sentence is cut at the word level. Returns ``None`` when nothing matched.
    """
    entities = list(dict.fromkeys(entities))
    if not entities:
        return None
    lo, hi = length_band(target_len_tokens)
    sents = [s for e in entities for s in _sentences(kb.description(e))]
    if not sents:
        return None
    out = []
    for s in sents:
        if len(out) + len(s) <= hi:
            out.extend(s)
    if not out:
        out = sents[0][:hi]
    i = 0
    while len(out) < lo:
        s = sents[i % len(sents)]
        out.extend(s[: hi - len(out)])
        i += 1
    return " ".join(out)


def mean_comment_length(records):
    lens = [len(tokenize(c)) for r in records for c in r.comments]
    return sum(lens) / len(lens) if lens else 0.0


def build_knowledge_dataset(records, kb, target_len=None):
    """One knowledge sample per post with at least one matched entity.

    ``target_len`` defaults to the mean comment length over ``records``
    (callers pass the training split only).
    """
    instrument.hit("knowledge.build")
    if target_len is None:
        target_len = mean_comment_length(records)
    samples = []
    if target_len <= 0 or len(kb) == 0:
        log.warning("knowledge dataset is empty; the knowledge term will be skipped")
        return samples
    for r in records:
        ents = extract_entities(r.text, kb)
        text = summarize_descriptions(ents, kb, target_len)
        if text:
            samples.append(KnowledgeSample(r.id, r.text, text, list(dict.fromkeys(ents))))
    if not samples:
        log.warning("knowledge dataset is empty; the knowledge term will be skipped")
    return samples
