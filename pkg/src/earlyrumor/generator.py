"""Tuning the expert bank: generation loss, human-style loss and adversarial style loss."""
from __future__ import annotations

import copy
import json
import logging
import math
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import instrument
from . import tensor as tt
from .errors import ContractError, NonFiniteError, TrainingAborted
from .lm import ExpertBank, pad_batch, sequence_nll, subset_weights, decode
from .optim import Adam, AdamW
from .routing import build_similarity_graph, connected_components, sample_routing_plan
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

HUMAN_STYLE, ROUTED_STYLE = 1, 0


class StyleDiscriminator:
    """Linear map d -> 2 logits; label 1 = human-style expert, 0 = routed experts."""

    def __init__(self, d, seed=0, zero=False):
        rng = np.random.default_rng(seed)
        w = np.zeros((d, 2)) if zero else rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, 2))
        self.W = Tensor(w, requires_grad=True, name="disc.W")
        self.b = Tensor(np.zeros(2), requires_grad=True, name="disc.b")

    def params(self):
        return {"disc.W": self.W, "disc.b": self.b}

    def __call__(self, x):
        return x @ self.W + self.b


@dataclass
class TuningConfig:
    alpha: float = 1.0
    beta: float = 1.0
    epochs: int = 5
    batch_size: int = 8
    epsilon: float = 0.5
    n_experts: int = 10
    lr: float = 3e-3
    weight_decay: float = 0.01
    seed: int = 1
    max_comments_per_post: int = 4
    disc_lr_scale: float = 1.0
    grl_weight: float = 0.1
    grl_ramp: bool = True
    disable_sa: bool = False
    disable_dk: bool = False
    disable_hcr: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.disc_lr_scale <= 0:
            raise ValueError("disc_lr_scale must be positive")
        if self.grl_weight < 0:
            raise ValueError("grl_weight must be non-negative")


@dataclass
class Sample:
    """One (post, target comment) pair; ``knowledge`` marks synthetic knowledge targets."""
    post: int
    target: list
    knowledge: bool = False


@dataclass
class TunedGenerator:
    backbone: object
    bank: ExpertBank
    discriminator: StyleDiscriminator
    vocab: object
    epsilon: float = 0.5
    log: list = field(default_factory=list)

    def encode_posts(self, post_ids):
        """Frozen encodings of token-id lists, returned as a list of (n_i x d) arrays."""
        out = []
        with no_grad():
            for start in range(0, len(post_ids), 64):
                chunk = [list(p)[: self.backbone.dims.max_len] or [0] for p in post_ids[start:start + 64]]
                ids, mask = pad_batch(chunk)
                H = self.backbone.encode_batch(ids, mask).data
                out.extend(H[i, : len(c)] for i, c in enumerate(chunk))
        return out

    def expert_embeddings(self, H_list):
        """Mean-pooled embedding of every routed expert per post: (P x L x d)."""
        out = []
        with no_grad():
            for start in range(0, len(H_list), 64):
                H, mask = _pad_hidden(H_list[start:start + 64])
                E = self.bank.all_experts(Tensor(H)).data  # B L n d
                w = mask / mask.sum(axis=1, keepdims=True)
                out.append(np.einsum("blnd,bn->bld", E, w))
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.bank.n_experts, 0))

    def groupings(self, H_list):
        embs = self.expert_embeddings(H_list)
        return [connected_components(build_similarity_graph(e, self.epsilon)) for e in embs]


def _pad_hidden(H_list):
    n = max(h.shape[0] for h in H_list)
    d = H_list[0].shape[1]
    H = np.zeros((len(H_list), n, d))
    mask = np.zeros((len(H_list), n), dtype=bool)
    for i, h in enumerate(H_list):
        H[i, : h.shape[0]] = h
        mask[i, : h.shape[0]] = True
    return H, mask


def post_seed(run_seed, post_id):
    """Per-post RNG seed: run seed XOR a stable hash of the post id."""
    return (int(run_seed) ^ zlib.crc32(str(post_id).encode("utf-8"))) & 0xFFFFFFFF


# -- the three objectives ------------------------------------------------------------

def _routed_memory(bank, H_list, subsets):
    H, mask = _pad_hidden(H_list)
    o = bank.combine(Tensor(H), subset_weights(subsets, bank.n_experts))
    return o, mask


def loss_GT(gen, H_real, real_targets, real_subsets, H_kappa=(), kappa_targets=(), kappa_subsets=()):
    """Generation loss on real comments plus (when present) knowledge comments.

    Each term is a mean over its samples of the per-token mean cross-entropy.
    Returns ``(loss, o_real, mask_real, o_kappa, mask_kappa)`` so callers can
    reuse the routed memories for the style loss.
    """
    if not real_targets and not kappa_targets:
        raise ContractError("empty batch")
    loss = Tensor(0.0)
    o_r = m_r = o_k = m_k = None
    if real_targets:
        o_r, m_r = _routed_memory(gen.bank, H_real, real_subsets)
        loss = loss + sequence_nll(gen.backbone, o_r, m_r, real_targets)
    if kappa_targets:
        o_k, m_k = _routed_memory(gen.bank, H_kappa, kappa_subsets)
        loss = loss + sequence_nll(gen.backbone, o_k, m_k, kappa_targets)
    return loss, o_r, m_r, o_k, m_k


def loss_AM(gen, H_real, real_targets, knowledge_flags=None):
    """Human-style expert loss; only original comments are allowed."""
    if knowledge_flags is not None and any(knowledge_flags):
        raise ContractError("knowledge samples must not reach the human-style expert")
    H, mask = _pad_hidden(H_real)
    o = gen.bank.human_forward(Tensor(H))
    return sequence_nll(gen.backbone, o, mask, real_targets)


def loss_SA(o_pooled, hH_pooled, discriminator, reverse=True, reverse_scale=1.0):
    """Style loss CE(o W_S, 0) + CE(h^H W_S, 1) with the routed side passed through GRL.

    Minimising it trains the discriminator; through the reversal layer the same
    backward pass pushes the routed experts to maximise it.
    """
    if o_pooled.shape[0] == 0 or hH_pooled.shape[0] == 0:
        raise ContractError("style loss needs both routed and human embeddings")
    o_in = tt.gradient_reverse(o_pooled, reverse_scale) if reverse else o_pooled
    lo = tt.cross_entropy(discriminator(o_in), np.full(o_pooled.shape[0], ROUTED_STYLE))
    lh = tt.cross_entropy(discriminator(hH_pooled), np.full(hH_pooled.shape[0], HUMAN_STYLE))
    return lo + lh


def grl_scale(step, total_steps, gamma=10.0):
    """Reversal strength rising from 0 to 1 over training so the discriminator leads early on."""
    p = step / max(total_steps, 1)
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


def _pool(o, mask):
    return tt.masked_mean(o, mask)


# -- tuning loop --------------------------------------------------------------------

def prepare_samples(records, vocab, knowledge=(), max_comments=None, max_len=47):
    """Token ids for the training posts and their (post, comment) samples."""
    index = {r.id: i for i, r in enumerate(records)}
    posts = [vocab.encode(r.text)[:max_len] for r in records]
    real = []
    for i, r in enumerate(records):
        for c in r.comments[: max_comments or None]:
            ids = vocab.encode(c)[:max_len - 1]
            if ids:
                real.append(Sample(i, ids))
    kappa = []
    for ks in knowledge:
        ids = vocab.encode(ks.comment)[:max_len - 1]
        if ids and ks.post_id in index:
            kappa.append(Sample(index[ks.post_id], ids, knowledge=True))
    return posts, real, kappa


def _epoch_selection(samples, per_post, rng):
    """Indices of at most ``per_post`` randomly chosen samples for every post."""
    by_post = {}
    for i, s in enumerate(samples):
        by_post.setdefault(s.post, []).append(i)
    chosen = []
    for post in sorted(by_post):
        idx = by_post[post]
        if per_post and len(idx) > per_post:
            idx = sorted(rng.choice(idx, size=per_post, replace=False).tolist())
        chosen.extend(idx)
    return chosen


def _choose_subsets(samples, groupings, cfg, rng):
    if cfg.disable_hcr:
        picks = rng.integers(0, cfg.n_experts, size=len(samples))
        return [(int(p),) for p in picks]
    return [sample_routing_plan(groupings[s.post], 1, rng)[0] for s in samples]


def tune_generator(backbone, vocab, records, knowledge, cfg, log_path=None):
    """Tune the routed experts, the human-style expert and the discriminator.

    ``backbone`` must already be frozen; its checksum is verified at the end.
    Returns a :class:`TunedGenerator` whose ``log`` holds one record per epoch.
    """
    instrument.hit("generator.tune")
    if not records:
        raise ValueError("cannot tune on an empty dataset")
    if not backbone.frozen:
        raise ContractError("backbone must be frozen before tuning")
    checksum = backbone.checksum()
    d, r = backbone.dims.d, backbone.dims.rank
    bank = ExpertBank(cfg.n_experts, d, r, backbone.dims.adapter_scale, seed=cfg.seed)
    disc = StyleDiscriminator(d, seed=cfg.seed + 7919)
    gen = TunedGenerator(backbone, bank, disc, vocab, cfg.epsilon)

    posts, all_real, kappa = prepare_samples(records, vocab, () if cfg.disable_dk else knowledge,
                                             None, backbone.dims.max_len - 1)
    if not all_real:
        raise ValueError("no usable comments to tune on")
    H_all = gen.encode_posts(posts)

    opt = AdamW(bank.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    # the discriminator has to keep pace with the experts or the reversed gradient overshoots
    opt_d = AdamW(disc.params(), lr=cfg.lr * cfg.disc_lr_scale, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    use_sa = cfg.beta > 0 and not cfg.disable_sa
    use_am = cfg.alpha > 0
    last_good = (bank.state_dict(), {k: t.data.copy() for k, t in disc.params().items()})
    history = []
    step = 0
    per_post = Counter(s.post for s in all_real).values()
    per_epoch = sum(min(c, cfg.max_comments_per_post or c) for c in per_post)
    total_steps = cfg.epochs * -(-per_epoch // cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        groupings = None if cfg.disable_hcr else gen.groupings(H_all)
        real = [all_real[i] for i in _epoch_selection(all_real, cfg.max_comments_per_post, rng)]
        real_subsets = _choose_subsets(real, groupings, cfg, rng)
        kappa_subsets = _choose_subsets(kappa, groupings, cfg, rng) if kappa else []
        order = rng.permutation(len(real))
        korder = rng.permutation(len(kappa)) if kappa else np.zeros(0, dtype=int)
        kpos = 0
        sums = {"GT": 0.0, "AM": 0.0, "SA": 0.0}
        n_steps = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            rb = [real[i] for i in idx]
            kb = []
            if len(kappa):
                for _ in range(cfg.batch_size):
                    if kpos == len(korder):
                        korder, kpos = rng.permutation(len(kappa)), 0
                    kb.append(int(korder[kpos]))
                    kpos += 1
            try:
                l_gt, o_r, m_r, o_k, m_k = loss_GT(
                    gen,
                    [H_all[s.post] for s in rb], [s.target for s in rb], [real_subsets[i] for i in idx],
                    [H_all[kappa[i].post] for i in kb], [kappa[i].target for i in kb],
                    [kappa_subsets[i] for i in kb])
                total = l_gt
                if use_am:
                    l_am = loss_AM(gen, [H_all[s.post] for s in rb], [s.target for s in rb])
                    total = total + l_am * cfg.alpha
                    sums["AM"] += float(l_am.data)
                if use_sa:
                    pooled = [_pool(o_r, m_r)]
                    posts_for_style = [s.post for s in rb]
                    if o_k is not None:
                        pooled.append(_pool(o_k, m_k))
                        posts_for_style += [kappa[i].post for i in kb]
                    o_pool = tt.concat(pooled, axis=0) if len(pooled) > 1 else pooled[0]
                    H, mask = _pad_hidden([H_all[p] for p in posts_for_style])
                    with no_grad():
                        hH = _pool(bank.human_forward(Tensor(H)), mask)
                    strength = cfg.grl_weight * (grl_scale(step, total_steps) if cfg.grl_ramp else 1.0)
                    l_sa = loss_SA(o_pool, Tensor(hH.data), disc, reverse_scale=strength)
                    total = total + l_sa * cfg.beta
                    sums["SA"] += float(l_sa.data)
                if not math.isfinite(float(total.data)):
                    raise NonFiniteError("non-finite tuning loss")
                opt.zero_grad()
                opt_d.zero_grad()
                total.backward()
                opt.step()
                opt_d.step()
            except (NonFiniteError, TrainingAborted) as exc:
                bank.load_state_dict(last_good[0])
                for k, t in disc.params().items():
                    t.data = last_good[1][k].copy()
                diag = dict(getattr(exc, "diagnostics", {}))
                diag.update({"epoch": epoch, "step": step, "last_good": "restored"})
                raise TrainingAborted(f"generator tuning aborted: {exc}", diag) from exc
            sums["GT"] += float(l_gt.data)
            n_steps += 1
            step += 1
        rec = {"epoch": epoch,
               "loss_GT": sums["GT"] / n_steps,
               "loss_AM": sums["AM"] / n_steps if use_am else 0.0,
               "loss_SA": sums["SA"] / n_steps if use_sa else 0.0,
               "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
        history.append(rec)
        log.info("tuning epoch %d: %s", epoch, rec)
        last_good = (bank.state_dict(), {k: t.data.copy() for k, t in disc.params().items()})
    if backbone.checksum() != checksum:
        raise ContractError("frozen backbone changed during tuning")
    gen.log = history
    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            for rec in history:
                fh.write(json.dumps(rec) + "\n")
    return gen


# -- generation ---------------------------------------------------------------------

@dataclass
class GeneratedComment:
    post_id: str
    k: int
    text: str
    expert_subset: tuple

    def to_dict(self):
        return {"post_id": self.post_id, "k": self.k, "text": self.text,
                "expert_subset": list(self.expert_subset)}


def generate_comments(gen, records, K, seed, mode="sample", temperature=0.8, max_len=12,
                      routing="collaborative", fixed_expert=0):
    """Generate comments for each record.

    ``K`` is an int or a per-record list. ``routing`` is ``"collaborative"``
    (grouped subsets), ``"single"`` (one uniformly drawn expert per comment)
    or ``"fixed"`` (always ``fixed_expert``). Every post gets its own RNG
    stream, so results do not depend on which other posts are in the call.
    Returns one list of :class:`GeneratedComment` per record.
    """
    instrument.hit("generator.generate")
    Ks = [K] * len(records) if isinstance(K, (int, np.integer)) else list(K)
    if any(k < 0 for k in Ks):
        raise ValueError("K must be non-negative")
    todo = [i for i, k in enumerate(Ks) if k > 0]
    results = [[] for _ in records]
    if not todo:
        return results
    post_ids = [gen.vocab.encode(records[i].text)[: gen.backbone.dims.max_len] or [3] for i in todo]
    H_list = gen.encode_posts(post_ids)
    groupings = gen.groupings(H_list) if routing == "collaborative" else [None] * len(todo)
    rows_H, rows_sub, rows_rng, rows_meta = [], [], [], []
    for j, i in enumerate(todo):
        rng = np.random.default_rng(post_seed(seed, records[i].id))
        if routing == "collaborative":
            plan = sample_routing_plan(groupings[j], Ks[i], rng)
        elif routing == "single":
            plan = [(int(x),) for x in rng.integers(0, gen.bank.n_experts, size=Ks[i])]
        elif routing == "fixed":
            plan = [(int(fixed_expert),)] * Ks[i]
        else:
            raise ValueError(f"unknown routing {routing!r}")
        for k, sub in enumerate(plan):
            rows_H.append(H_list[j])
            rows_sub.append(tuple(sub))
            rows_rng.append(np.random.default_rng([post_seed(seed, records[i].id), k]))
            rows_meta.append((i, k))
    with no_grad():
        for start in range(0, len(rows_H), 256):
            sl = slice(start, start + 256)
            H, mask = _pad_hidden(rows_H[sl])
            o = gen.bank.combine(Tensor(H), subset_weights(rows_sub[sl], gen.bank.n_experts))
            if mode == "greedy":
                toks = decode(gen.backbone, o, mask, max_len=max_len, mode="greedy")
            else:
                toks = decode(gen.backbone, o, mask, max_len=max_len, mode="sample",
                              temperature=temperature, rng=rows_rng[sl])
            for (i, k), sub, t in zip(rows_meta[sl], rows_sub[sl], toks):
                results[i].append(GeneratedComment(records[i].id, k, gen.vocab.decode(t), sub))
    return results


def save_generated(results, path):
    with open(path, "w", encoding="utf-8") as fh:
        for per_post in results:
            for g in per_post:
                fh.write(json.dumps(g.to_dict(), ensure_ascii=False) + "\n")


def load_generated(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.setdefault(obj["post_id"], []).append(
                    GeneratedComment(obj["post_id"], obj["k"], obj["text"], tuple(obj["expert_subset"])))
    for v in out.values():
        v.sort(key=lambda g: g.k)
    return out


# -- post-hoc style probe -------------------------------------------------------------

def style_embeddings(gen, records, seed):
    """Pooled routed memory (one collaborative subset per post) and pooled human-expert memory."""
    post_ids = [gen.vocab.encode(r.text)[: gen.backbone.dims.max_len] or [3] for r in records]
    H_list = gen.encode_posts(post_ids)
    groupings = gen.groupings(H_list)
    subs = [sample_routing_plan(g, 1, np.random.default_rng(post_seed(seed, r.id)))[0]
            for g, r in zip(groupings, records)]
    H, mask = _pad_hidden(H_list)
    with no_grad():
        o = gen.bank.combine(Tensor(H), subset_weights(subs, gen.bank.n_experts))
        hH = gen.bank.human_forward(Tensor(H))
        return _pool(o, mask).data, _pool(hH, mask).data


def probe_accuracy(routed, human, seed=0, steps=300, lr=0.05):
    """Held-out accuracy of a freshly trained linear probe separating routed from human embeddings.

    Posts are split in half; the probe trains on one half of the posts (both of
    their embeddings) and is scored on the other half.
    """
    n = routed.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    tr, te = perm[: n // 2], perm[n // 2:]

    def xy(idx):
        X = np.concatenate([routed[idx], human[idx]])
        y = np.concatenate([np.full(len(idx), ROUTED_STYLE), np.full(len(idx), HUMAN_STYLE)])
        return X, y

    Xtr, ytr = xy(tr)
    Xte, yte = xy(te)
    mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0) + 1e-8
    probe = StyleDiscriminator(routed.shape[1], seed=seed)
    opt = Adam(probe.params(), lr=lr)
    for _ in range(steps):
        loss = tt.cross_entropy(probe(Tensor((Xtr - mu) / sd)), ytr)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with no_grad():
        pred = probe(Tensor((Xte - mu) / sd)).data.argmax(axis=1)
    return float((pred == yte).mean())


def snapshot(gen):
    """Deep copy of the tunable state (for checkpointing / comparisons)."""
    return {**gen.bank.state_dict(), **{k: t.data.copy() for k, t in gen.discriminator.params().items()}}


def clone(gen):
    return copy.deepcopy(gen)
