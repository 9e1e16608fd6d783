"""Experiment orchestration: data, knowledge, generator, detector, quality scores, sweeps."""
from __future__ import annotations

import csv
import json
import logging
import os

import numpy as np

from . import instrument
from .config import RunConfig
from .data import generate_synthetic_corpus, load_dataset, split
from .detector import DetectorConfig, embed_texts, evaluate_examples, make_examples, train_detector
from .errors import TrainingAborted
from .generator import (TuningConfig, generate_comments, probe_accuracy, style_embeddings,
                        tune_generator)
from .knowledge import KnowledgeBase, build_knowledge_dataset
from .lm import Backbone, ModelDims, Vocabulary, pretrain_backbone
from .quality import diversity, style_similarity

log = logging.getLogger(__name__)

METRICS = ("accuracy", "macro_f1", "auc", "macro_precision", "macro_recall")

ABLATIONS = {
    "full": {},
    "no_cgt": {"no_cgt": True},
    "no_sa": {"no_sa": True},
    "no_dk": {"no_dk": True},
    "no_hcr": {"no_hcr": True},
    "no_mcf": {"no_mcf": True},
}

_DATA_KEYS = ("data_path", "kb_path", "n_posts", "comments_per_post", "vocab_size", "n_classes",
              "class_separation", "kb_entity_rate", "data_seed")
_BACKBONE_KEYS = _DATA_KEYS + ("d", "rank", "pretrain_steps")
_GEN_KEYS = _BACKBONE_KEYS + ("n_experts", "epsilon", "alpha", "beta", "gen_epochs", "gen_batch_size",
                              "gen_lr", "gen_weight_decay", "disc_lr_scale", "grl_weight", "grl_ramp",
                              "gen_comments_per_post", "no_sa", "no_dk", "no_hcr")

# in-process caches keyed by config digests; cached objects are never mutated
_CACHE = {"data": {}, "backbone": {}, "generator": {}, "generated": {}}


def clear_cache():
    for c in _CACHE.values():
        c.clear()


def balance_counts(M, M_prime, target):
    """Generated counts ``(K, K')`` with ``M + K == M' + K' == target``."""
    if M < 0 or M_prime < 0:
        raise ValueError("comment counts must be non-negative")
    if target < max(M, M_prime):
        raise ValueError(f"target {target} is below the available counts ({M}, {M_prime})")
    return target - M, target - M_prime


# -- stages ----------------------------------------------------------------------------

def load_corpus(cfg):
    """``(records, kb, vocab)`` from the configured files or the synthetic generator."""
    key = cfg.digest(_DATA_KEYS)
    if key not in _CACHE["data"]:
        if cfg.data_path:
            records = load_dataset(cfg.data_path, cfg.n_classes)
            kb = KnowledgeBase.load(cfg.kb_path) if cfg.kb_path else KnowledgeBase()
        else:
            records, kb = generate_synthetic_corpus(
                cfg.data_seed, cfg.n_posts, cfg.comments_per_post, cfg.vocab_size, cfg.n_classes,
                cfg.class_separation, cfg.kb_entity_rate)
        _CACHE["data"][key] = (records, kb, build_vocabulary(records, kb))
    return _CACHE["data"][key]


def build_vocabulary(records, kb):
    """Vocabulary over training posts and comments plus the knowledge-base text."""
    train = split(records, "train")
    texts = [r.text for r in train] + [c for r in train for c in r.comments]
    texts += [f"{e} {d}" for e, d in kb.items()]
    return Vocabulary.build(texts)


def pretrained_backbone(cfg, seed, records, vocab):
    key = (cfg.digest(_BACKBONE_KEYS), seed)
    if key not in _CACHE["backbone"]:
        instrument.hit("generator.pretrain")
        train = split(records, "train")
        bb = Backbone(len(vocab), ModelDims(d=cfg.d, rank=cfg.rank), seed=seed)
        texts = [r.text for r in train] + [c for r in train for c in r.comments]
        pairs = [(r.text, c) for r in train for c in r.comments]
        pretrain_backbone(bb, vocab, texts, steps=cfg.pretrain_steps, seed=seed, pairs=pairs)
        _CACHE["backbone"][key] = bb
    return _CACHE["backbone"][key]


def tuning_config(cfg, seed):
    return TuningConfig(alpha=cfg.alpha, beta=cfg.beta, epochs=cfg.gen_epochs, batch_size=cfg.gen_batch_size,
                        epsilon=cfg.epsilon, n_experts=cfg.n_experts, lr=cfg.gen_lr,
                        weight_decay=cfg.gen_weight_decay, disc_lr_scale=cfg.disc_lr_scale,
                        grl_weight=cfg.grl_weight, grl_ramp=cfg.grl_ramp, seed=seed,
                        max_comments_per_post=cfg.gen_comments_per_post,
                        disable_sa=cfg.no_sa, disable_dk=cfg.no_dk, disable_hcr=cfg.no_hcr)


def tuned_generator(cfg, seed, records, kb, vocab):
    key = (cfg.digest(_GEN_KEYS), seed)
    if key not in _CACHE["generator"]:
        train = split(records, "train")
        knowledge = [] if cfg.no_dk else build_knowledge_dataset(train, kb)
        bb = pretrained_backbone(cfg, seed, records, vocab)
        _CACHE["generator"][key] = tune_generator(bb, vocab, train, knowledge, tuning_config(cfg, seed))
    return _CACHE["generator"][key]


def generated_texts(cfg, seed, gen, records, K, routing="collaborative"):
    """post id -> K generated comment texts (cached per generator, seed and routing)."""
    key = (cfg.digest(_GEN_KEYS), seed, K, routing, cfg.temperature, cfg.gen_max_len,
           tuple(r.id for r in records))
    if key not in _CACHE["generated"]:
        out = generate_comments(gen, records, K, seed, temperature=cfg.temperature,
                                max_len=cfg.gen_max_len, routing=routing)
        _CACHE["generated"][key] = {r.id: [g.text for g in gs] for r, gs in zip(records, out)}
    return _CACHE["generated"][key]


def detector_config(cfg, seed, mean_pool=False):
    return DetectorConfig(n_classes=cfg.n_classes, d=cfg.d, lr=cfg.det_lr, batch_size=cfg.det_batch_size,
                          patience=cfg.patience, max_epochs=cfg.max_epochs, seed=seed,
                          fusion="mean" if mean_pool else "mcf", tau=cfg.tau_value)


# -- one seed --------------------------------------------------------------------------

def _embed_sets(encoder, vocab, text_sets):
    return [embed_texts(encoder, vocab, ts) for ts in text_sets]


def run_seed(cfg, seed):
    """All stages for one seed; returns a JSON-able record."""
    stage = "data"
    try:
        records, kb, vocab = load_corpus(cfg)
        train, valid, test = split(records, "train"), split(records, "valid"), split(records, "test")
        if cfg.balance and not cfg.no_cgt:
            K, K_test = balance_counts(cfg.m_train, cfg.m_test, cfg.target_total)
        else:
            K, K_test = 0, 0
        gen = None
        gen_train = gen_valid = gen_test = None
        out = {"seed": seed, "K": K, "K_prime": K_test}
        if not cfg.no_cgt:
            stage = "tune-generator"
            gen = tuned_generator(cfg, seed, records, kb, vocab)
            out["tuning_log"] = [{k: v for k, v in rec.items() if k != "wall_ms"} for rec in gen.log]
            stage = "generate"
            if K:
                gen_train = generated_texts(cfg, seed, gen, train, K)
                gen_valid = generated_texts(cfg, seed, gen, valid, K)
            if K_test:
                gen_test = generated_texts(cfg, seed, gen, test, K_test)
        stage = "train-detector"
        res = train_detector(make_examples(train, vocab, cfg.m_train, gen_train, K),
                             make_examples(valid, vocab, cfg.m_train, gen_valid, K),
                             len(vocab), detector_config(cfg, seed, cfg.no_mcf))
        out["detector_epochs"] = len(res.history)
        out["best_epoch"] = res.best_epoch
        stage = "evaluate"
        report = evaluate_examples(res.detector, make_examples(test, vocab, cfg.m_test, gen_test, K_test))
        out["metrics"] = report.to_dict()
        if gen is not None:
            stage = "quality"
            out["quality"] = quality_scores(cfg, seed, gen, res.detector.encoder, vocab, test)
        out["status"] = "ok"
        return out
    except TrainingAborted as exc:
        return {"seed": seed, "status": "aborted", "stage": stage, "error": str(exc),
                "diagnostics": {k: str(v) for k, v in exc.diagnostics.items()}}
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        return {"seed": seed, "status": "failed", "stage": stage, "error": f"{type(exc).__name__}: {exc}"}


def quality_scores(cfg, seed, gen, encoder, vocab, test):
    """Sty./Div. of collaborative generation, Div. of fixed single experts, and the style probe."""
    k = cfg.quality_k
    collab = generated_texts(cfg, seed, gen, test, k)
    orig = _embed_sets(encoder, vocab, [r.comments for r in test])
    gen_emb = _embed_sets(encoder, vocab, [collab[r.id] for r in test])
    keep = [i for i in range(len(test)) if len(orig[i]) and len(gen_emb[i])]
    out = {"sty": style_similarity([orig[i] for i in keep], [gen_emb[i] for i in keep]),
           "div": diversity([gen_emb[i] for i in keep])}
    fixed = []
    for l in range(gen.bank.n_experts):
        res = generate_comments(gen, test, k, seed, temperature=cfg.temperature, max_len=cfg.gen_max_len,
                                routing="fixed", fixed_expert=l)
        embs = _embed_sets(encoder, vocab, [[g.text for g in gs] for gs in res])
        fixed.append(diversity([e for e in embs if len(e)]))
    out["div_fixed_expert"] = float(np.mean(fixed))
    routed, human = style_embeddings(gen, test, seed)
    out["probe_accuracy"] = probe_accuracy(routed, human, seed=seed)
    return out


# -- reports ---------------------------------------------------------------------------

def _mean_std(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def summarize(seed_records):
    ok = [r for r in seed_records if r.get("status") == "ok"]
    summary = {m: _mean_std([r["metrics"][m] for r in ok]) for m in METRICS}
    for q in ("sty", "div", "div_fixed_expert", "probe_accuracy"):
        vals = [r["quality"][q] for r in ok if "quality" in r]
        if vals:
            summary[q] = _mean_std(vals)
    return summary


def run_experiment(cfg):
    """Every stage for every configured seed plus mean/std summaries."""
    seeds = [run_seed(cfg, s) for s in cfg.seeds]
    return {"config": cfg.to_dict(), "seeds": seeds, "summary": summarize(seeds),
            "complete": all(r["status"] == "ok" for r in seeds)}


def run_ablations(cfg, variants=None):
    """Reports for the full pipeline and each single-switch ablation."""
    variants = variants or list(ABLATIONS)
    return {name: run_experiment(cfg.with_(**ABLATIONS[name])) for name in variants}


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "status", *METRICS, "sty", "div"])
        for r in report["seeds"]:
            m = r.get("metrics", {})
            q = r.get("quality", {})
            w.writerow([r["seed"], r["status"], *[_fmt(m.get(k)) for k in METRICS],
                        _fmt(q.get("sty")), _fmt(q.get("div"))])
        for stat in ("mean", "std"):
            s = report["summary"]
            w.writerow([stat, "", *[_fmt(s[k][stat]) for k in METRICS],
                        _fmt(s.get("sty", {}).get(stat)), _fmt(s.get("div", {}).get(stat))])


def _fmt(x):
    return "" if x is None else repr(float(x))


# -- comment-count sweep ---------------------------------------------------------------

def sweep_comments(cfg, train_counts=None, test_counts=None, modes=("raw", "balanced")):
    """Macro F1 grids over (train count, test count), raw and with generated top-ups.

    Counts cap the original comments used. In ``balanced`` mode every post is
    topped up with generated comments to ``cfg.target_total``. One detector is
    trained per (seed, train count, mode) and scored at every test count.
    """
    train_counts = list(train_counts or cfg.sweep_counts)
    test_counts = list(test_counts or cfg.sweep_counts)
    if not train_counts or not test_counts:
        raise ValueError("count lists must be non-empty")
    if "balanced" in modes and max(train_counts + test_counts) > cfg.target_total:
        raise ValueError("sweep counts exceed target_total")
    records, kb, vocab = load_corpus(cfg)
    train, valid, test = split(records, "train"), split(records, "valid"), split(records, "test")
    grids = {m: np.zeros((len(cfg.seeds), len(train_counts), len(test_counts))) for m in modes}
    for si, seed in enumerate(cfg.seeds):
        gen_all = None
        if "balanced" in modes:
            gen = tuned_generator(cfg.with_(no_sa=False, no_dk=False, no_hcr=False), seed, records, kb, vocab)
            gen_all = {}
            for part in (train, valid, test):
                gen_all.update(generated_texts(cfg, seed, gen, part, cfg.target_total))
        for mode in modes:
            for i, m in enumerate(train_counts):
                K = cfg.target_total - m if mode == "balanced" else 0
                dcfg = detector_config(cfg, seed)
                res = train_detector(make_examples(train, vocab, m, gen_all, K),
                                     make_examples(valid, vocab, m, gen_all, K),
                                     len(vocab), dcfg, allow_empty=True)
                for j, mt in enumerate(test_counts):
                    Kt = cfg.target_total - mt if mode == "balanced" else 0
                    ex = make_examples(test, vocab, mt, gen_all, Kt)
                    grids[mode][si, i, j] = evaluate_examples(res.detector, ex, allow_empty=True).macro_f1
    result = {"train_counts": train_counts, "test_counts": test_counts, "seeds": list(cfg.seeds),
              "metric": "macro_f1"}
    for mode, g in grids.items():
        result[mode] = {"mean": g.mean(axis=0).tolist(), "std": g.std(axis=0).tolist(),
                        "per_seed": g.tolist()}
    return result


def write_sweep(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "train_count", "test_count", "macro_f1_mean", "macro_f1_std"])
        for mode in ("raw", "balanced"):
            if mode not in result:
                continue
            for i, m in enumerate(result["train_counts"]):
                for j, mt in enumerate(result["test_counts"]):
                    w.writerow([mode, m, mt, repr(result[mode]["mean"][i][j]), repr(result[mode]["std"][i][j])])
