"""Toy encoder-decoder with a frozen backbone and low-rank expert adapters.

Shapes used throughout: ``B`` batch, ``n`` source length, ``T`` target length,
``d`` model width, ``L`` number of experts, ``r`` adapter rank, ``V`` vocabulary.
"""
from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import DimensionError
from .optim import Adam
from .tensor import Tensor, no_grad

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


def tokenize(text):
    """Lower-cased whitespace tokens with sentence punctuation dropped."""
    return re.findall(r"[^\s.!?]+", text.lower())


class Vocabulary:
    def __init__(self, tokens):
        tokens = [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.itos = list(RESERVED) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.itos) < 8:
            raise ValueError("vocabulary must hold at least 8 entries")

    @classmethod
    def build(cls, texts, min_count=1):
        counts = Counter(tok for text in texts for tok in tokenize(text))
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self):
        return len(self.itos)

    def encode(self, text):
        return [self.stoi.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids):
        return " ".join(self.itos[i] for i in ids if i not in (PAD, BOS, EOS))

    def to_list(self):
        return list(self.itos)


def pad_batch(seqs, length=None, value=PAD):
    length = length or max(1, max((len(s) for s in seqs), default=1))
    out = np.full((len(seqs), length), value, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        s = list(s)[:length]
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


@dataclass
class ModelDims:
    d: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    ffn: int = 64
    rank: int = 4
    max_len: int = 48
    adapter_scale: float = 1.0


def _init(rng, shape, scale):
    return rng.normal(0.0, scale, size=shape)


class Backbone:
    """Token embeddings, encoder stack, cross-attending decoder and output head."""

    def __init__(self, vocab_size, dims=None, seed=0):
        dims = dims or ModelDims()
        self.dims = dims
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        d, f = dims.d, dims.ffn
        p = {}
        p["emb"] = _init(rng, (vocab_size, d), 1.0 / math.sqrt(d))
        p["enc_pos"] = _init(rng, (dims.max_len, d), 1.0 / math.sqrt(d))
        p["dec_pos"] = _init(rng, (dims.max_len, d), 1.0 / math.sqrt(d))
        for prefix, n in (("enc", dims.enc_layers), ("dec", dims.dec_layers)):
            for i in range(n):
                for w in ("wq", "wk", "wv"):
                    p[f"{prefix}{i}.{w}"] = _init(rng, (d, d), 1.0 / math.sqrt(d))
                p[f"{prefix}{i}.w1"] = _init(rng, (d, f), 1.0 / math.sqrt(d))
                p[f"{prefix}{i}.b1"] = np.zeros(f)
                p[f"{prefix}{i}.w2"] = _init(rng, (f, d), 1.0 / math.sqrt(f))
                p[f"{prefix}{i}.b2"] = np.zeros(d)
        p["out_w"] = _init(rng, (d, vocab_size), 1.0 / math.sqrt(d))
        p["out_b"] = np.zeros(vocab_size)
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
        self.frozen = False

    def freeze(self):
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None

    def unfreeze(self):
        self.frozen = False
        for t in self.params.values():
            t.requires_grad = True

    def checksum(self):
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, arrays):
        for k, t in self.params.items():
            t.data = np.array(arrays[k], dtype=np.float64)

    # -- encoder ------------------------------------------------------------------

    def _ffn(self, x, prefix):
        p = self.params
        h = tt.tanh(x @ p[prefix + ".w1"] + p[prefix + ".b1"])
        return x + (h @ p[prefix + ".w2"] + p[prefix + ".b2"])

    def encode_batch(self, ids, mask=None):
        """Hidden states H (B x n x d) for padded token ids (B x n)."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise DimensionError("encode expects a non-empty (B, n) id array")
        n = ids.shape[1]
        if n > self.dims.max_len:
            raise DimensionError("sequence longer than max_len")
        if mask is None:
            mask = ids != PAD
        p = self.params
        x = tt.take_rows(p["emb"], ids) + p["enc_pos"][:n]
        for i in range(self.dims.enc_layers):
            pre = f"enc{i}"
            x = x + tt.self_attention(x, p[pre + ".wq"], p[pre + ".wk"], p[pre + ".wv"], key_mask=mask)
            x = self._ffn(x, pre)
        return x

    def encode(self, tokens):
        """Per-token hidden states (n x d) of one token id sequence."""
        tokens = list(tokens)
        if not tokens:
            raise DimensionError("cannot encode an empty sequence")
        if max(tokens) >= self.vocab_size or min(tokens) < 0:
            raise IndexError("token id out of range")
        H = self.encode_batch(np.asarray([tokens]))
        return tt.reshape(H, H.shape[1:])

    # -- decoder ------------------------------------------------------------------

    def decoder_logits(self, prev_ids, o, o_mask, start=0):
        """Logits (B x T x V) for next tokens given previous tokens and memory ``o``.

        Position ``t`` sees its previous token, its position and cross-attends
        over the rows of ``o``; ``start`` offsets positions for step-wise decoding.
        """
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        T = prev_ids.shape[1]
        if start + T > self.dims.max_len:
            raise DimensionError("target longer than max_len")
        p = self.params
        z = tt.take_rows(p["emb"], prev_ids) + p["dec_pos"][start:start + T]
        for i in range(self.dims.dec_layers):
            pre = f"dec{i}"
            q = z @ p[pre + ".wq"]
            k = o @ p[pre + ".wk"]
            v = o @ p[pre + ".wv"]
            z = z + tt.matmul(tt.attention_weights(q, k, o_mask), v)
            z = self._ffn(z, pre)
        return z @ p["out_w"] + p["out_b"]


def _target_arrays(targets, max_len):
    seqs_in, seqs_out = [], []
    for t in targets:
        t = list(t)[: max_len - 1]
        if not t:
            raise ValueError("teacher forcing needs a non-empty target")
        seqs_in.append([BOS] + t)
        seqs_out.append(t + [EOS])
    prev, mask = pad_batch(seqs_in)
    tgt, _ = pad_batch(seqs_out)
    return prev, tgt, mask


def sequence_nll(backbone, o, o_mask, targets):
    """Mean over sequences of the per-token mean cross-entropy (EOS counted as a token)."""
    prev, tgt, mask = _target_arrays(targets, backbone.dims.max_len)
    logits = backbone.decoder_logits(prev, o, o_mask)
    B, T, V = logits.shape
    lengths = mask.sum(axis=1)
    weights = (mask / lengths[:, None]) / B
    return tt.cross_entropy(tt.reshape(logits, (B * T, V)), tgt.reshape(-1), weights.reshape(-1))


class LowRankAdapter:
    """``h + scale * (h @ down) @ up``; ``up`` starts at zero so a fresh adapter is the identity."""

    def __init__(self, d, rank, scale=1.0, rng=None, down=None, up=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.scale = float(scale)
        self.down = Tensor(down if down is not None else _init(rng, (d, rank), 1.0 / math.sqrt(d)), requires_grad=True)
        self.up = Tensor(up if up is not None else np.zeros((rank, d)), requires_grad=True)

    @property
    def rank(self):
        return self.down.shape[1]

    def params(self, prefix=""):
        return {prefix + "down": self.down, prefix + "up": self.up}


def expert_forward(H, adapter):
    """Adapted hidden sequence for one expert (identity at initialisation)."""
    H = tt._lift(H)
    if H.shape[-1] != adapter.down.shape[0]:
        raise DimensionError("adapter width does not match hidden states")
    return H + tt.matmul(tt.matmul(H, adapter.down), adapter.up) * adapter.scale


def pooled(x):
    """Mean over sequence rows: (n x d) -> (d)."""
    return tt.mean(x, axis=-2)


class ExpertBank:
    """L routed adapters stored stacked, plus the human-style adapter."""

    def __init__(self, n_experts, d, rank, scale=1.0, seed=0):
        if n_experts < 2:
            raise ValueError("need at least two routed experts")
        rng = np.random.default_rng(seed)
        self.n_experts = n_experts
        self.scale = float(scale)
        self.down = Tensor(_init(rng, (n_experts, d, rank), 1.0 / math.sqrt(d)), requires_grad=True, name="experts.down")
        self.up = Tensor(np.zeros((n_experts, rank, d)), requires_grad=True, name="experts.up")
        self.human = LowRankAdapter(d, rank, scale, rng=rng)

    def routed_params(self):
        return {"experts.down": self.down, "experts.up": self.up}

    def human_params(self):
        return self.human.params("human.")

    def params(self):
        return {**self.routed_params(), **self.human_params()}

    def adapter(self, l):
        """Independent copy of expert ``l`` as a standalone adapter."""
        return LowRankAdapter(self.down.shape[1], self.down.shape[2], self.scale,
                              down=self.down.data[l].copy(), up=self.up.data[l].copy())

    def all_experts(self, H):
        """Adapted sequences of every routed expert: (B x n x d) -> (B x L x n x d)."""
        B, n, d = H.shape
        H4 = tt.reshape(H, (B, 1, n, d))
        delta = tt.matmul(tt.matmul(H4, self.down), self.up)
        return H4 + delta * self.scale

    def combine(self, H, weights):
        """Weighted sum over experts with (B x L) weights (rows of a subset mean sum to 1)."""
        w = np.asarray(weights, dtype=np.float64)
        outs = self.all_experts(H)
        return tt.tsum(outs * w[:, :, None, None], axis=1)

    def human_forward(self, H):
        return expert_forward(H, self.human)

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params().items()}

    def load_state_dict(self, arrays):
        for k, t in self.params().items():
            t.data = np.array(arrays[k], dtype=np.float64)


def subset_weights(subsets, n_experts):
    w = np.zeros((len(subsets), n_experts))
    for i, s in enumerate(subsets):
        if not s:
            raise ValueError("empty expert subset")
        w[i, list(s)] = 1.0 / len(s)
    return w


def teacher_forced_nll(backbone, bank, context, target, subset):
    """Token-mean CE of ``target`` given ``context`` routed through ``subset``.

    ``subset`` is a collection of routed expert indices, or the string
    ``"human"`` for the human-style adapter.
    """
    H = backbone.encode_batch(np.asarray([list(context)]))
    if subset == "human":
        o = bank.human_forward(H)
    else:
        o = bank.combine(H, subset_weights([tuple(subset)], bank.n_experts))
    return sequence_nll(backbone, o, np.ones((1, H.shape[1]), dtype=bool), [list(target)])


def decode(backbone, o, o_mask=None, max_len=20, mode="greedy", temperature=1.0, rng=None):
    """Auto-regressive decoding for a batch of memories ``o`` (B x n x d).

    Returns one token-id list per row; PAD/BOS/UNK are never emitted and EOS
    is blocked at the first step, so every output is non-empty. In sample mode
    ``rng`` may be a list with one Generator per row, which makes each row's
    output independent of what else is in the batch.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    per_row = isinstance(rng, (list, tuple))
    if mode == "sample" and not per_row:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    o = tt._lift(o)
    if o.ndim == 2:
        o = tt.reshape(o, (1,) + o.shape)
    B = o.shape[0]
    if o_mask is None:
        o_mask = np.ones(o.shape[:2], dtype=bool)
    max_len = min(max_len, backbone.dims.max_len)
    out = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    prev = np.full((B, 1), BOS, dtype=np.int64)
    with no_grad():
        for step in range(max_len):
            logits = backbone.decoder_logits(prev, o, o_mask, start=step).data[:, 0, :].copy()
            logits[:, [PAD, BOS, UNK]] = -np.inf
            if step == 0:
                logits[:, EOS] = -np.inf
            if mode == "greedy":
                nxt = logits.argmax(axis=1)
            else:
                z = logits / max(temperature, 1e-6)
                z = z - z.max(axis=1, keepdims=True)
                pr = np.exp(z)
                pr /= pr.sum(axis=1, keepdims=True)
                u = np.array([g.random() for g in rng]) if per_row else rng.random(B)
                nxt = (pr.cumsum(axis=1) < u[:, None]).sum(axis=1)
                nxt = np.minimum(nxt, logits.shape[1] - 1)
            for b in range(B):
                if done[b]:
                    continue
                if nxt[b] == EOS:
                    done[b] = True
                else:
                    out[b].append(int(nxt[b]))
            if done.all():
                break
            prev = nxt.reshape(B, 1)
    return out


def pretrain_backbone(backbone, vocab, texts, steps=1500, batch_size=32, lr=3e-3, seed=0, noise=0.1,
                      pairs=(), pair_rate=0.5, log_every=0):
    """Self-supervised pass on unlabeled text, then freeze.

    Each batch item is either a denoising reconstruction (encode a token-dropped
    text, decode the original) or, with probability ``pair_rate`` when
    ``pairs`` is given, a continuation (encode a post, decode one of its
    comments). Stands in for a pre-trained model that can already reply to a post.
    """
    rng = np.random.default_rng(seed)
    L = backbone.dims.max_len - 1
    seqs = [s for s in (vocab.encode(t)[:L] for t in texts) if s]
    if not seqs:
        raise ValueError("no non-empty texts to pre-train on")
    conts = [(a, b) for a, b in ((vocab.encode(x)[:L], vocab.encode(y)[:L]) for x, y in pairs) if a and b]
    backbone.unfreeze()
    opt = Adam(backbone.params, lr=lr)
    losses = []
    for step in range(steps):
        src, tgt = [], []
        for _ in range(batch_size):
            if conts and rng.random() < pair_rate:
                a, b = conts[int(rng.integers(len(conts)))]
                src.append(a)
                tgt.append(b)
            else:
                s = seqs[int(rng.integers(len(seqs)))]
                src.append([UNK if rng.random() < noise else t for t in s])
                tgt.append(s)
        ids, mask = pad_batch(src)
        H = backbone.encode_batch(ids, mask)
        loss = sequence_nll(backbone, H, mask, tgt)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
        if log_every and step % log_every == 0:
            print(f"pretrain step {step} loss {loss.data:.4f}")
    backbone.freeze()
    return losses
