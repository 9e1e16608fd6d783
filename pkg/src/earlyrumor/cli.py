"""Command-line entry point. Exit codes: 0 success, 2 validation error, 3 training abort."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import pipeline
from .checkpoint import load_detector, load_generator, save_detector, save_generator
from .config import ConfigError, dump_config, load_config
from .data import DatasetError, dataset_stats, save_dataset, split
from .detector import embed_texts, evaluate_examples, make_examples, train_detector
from .errors import TrainingAborted
from .fusion import stance_split
from .generator import generate_comments, load_generated, save_generated
from .knowledge import build_knowledge_dataset
from .quality import diversity, style_similarity
from .routing import build_similarity_graph, connected_components

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3


def _config(args):
    overrides = {"data_path": args.data, "kb_path": args.kb, "out_dir": args.out}
    for flag in ("no_cgt", "no_sa", "no_dk", "no_hcr", "no_mcf"):
        if getattr(args, flag):
            overrides[flag] = True
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    return load_config(args.config, **overrides)


def _path(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _generator(cfg, seed):
    path = _path(cfg, "generator.ckpt")
    if os.path.exists(path):
        return load_generator(path)
    records, kb, vocab = pipeline.load_corpus(cfg)
    return pipeline.tuned_generator(cfg, seed, records, kb, vocab)


def _generated(cfg):
    path = _path(cfg, "generated.jsonl")
    if not os.path.exists(path):
        return {}
    return {pid: [g.text for g in gs] for pid, gs in load_generated(path).items()}


def _counts(cfg):
    if cfg.balance and not cfg.no_cgt:
        return pipeline.balance_counts(cfg.m_train, cfg.m_test, cfg.target_total)
    return 0, 0


# -- subcommands -----------------------------------------------------------------------

def cmd_synth_data(cfg, args):
    records, kb, _ = pipeline.load_corpus(cfg.with_(data_path="", kb_path=""))
    save_dataset(records, _path(cfg, "dataset.jsonl"))
    kb.save(_path(cfg, "kb.jsonl"))
    print(json.dumps(dataset_stats(records), sort_keys=True))


def cmd_build_knowledge(cfg, args):
    records, kb, _ = pipeline.load_corpus(cfg)
    samples = build_knowledge_dataset(split(records, "train"), kb)
    with open(_path(cfg, "knowledge.jsonl"), "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
    print(f"{len(samples)} knowledge samples")


def cmd_tune_generator(cfg, args):
    seed = cfg.seeds[0]
    records, kb, vocab = pipeline.load_corpus(cfg)
    gen = pipeline.tuned_generator(cfg, seed, records, kb, vocab)
    save_generator(_path(cfg, "generator.ckpt"), gen, seed)
    with open(_path(cfg, "tuning_log.jsonl"), "w", encoding="utf-8") as fh:
        for rec in gen.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if args.dump_routing:
        test = split(records, "test")[: args.dump_routing]
        H = gen.encode_posts([vocab.encode(r.text) or [3] for r in test])
        with open(_path(cfg, "routing.jsonl"), "w", encoding="utf-8") as fh:
            for r, e in zip(test, gen.expert_embeddings(H)):
                graph = build_similarity_graph(e, gen.epsilon)
                doc = json.loads(graph.to_json(connected_components(graph)))
                fh.write(json.dumps({"post_id": r.id, **doc}, sort_keys=True) + "\n")


def cmd_generate(cfg, args):
    seed = cfg.seeds[0]
    gen = _generator(cfg, seed)
    records, _, _ = pipeline.load_corpus(cfg)
    chosen = records if args.split == "all" else split(records, args.split)
    K = args.k if args.k is not None else cfg.target_total
    results = generate_comments(gen, chosen, K, seed, temperature=cfg.temperature, max_len=cfg.gen_max_len)
    save_generated(results, _path(cfg, "generated.jsonl"))
    print(f"{sum(len(r) for r in results)} comments for {len(chosen)} posts")


def cmd_train_detector(cfg, args):
    seed = cfg.seeds[0]
    records, _, vocab = pipeline.load_corpus(cfg)
    K, _ = _counts(cfg)
    generated = _generated(cfg) if K else None
    res = train_detector(make_examples(split(records, "train"), vocab, cfg.m_train, generated, K),
                         make_examples(split(records, "valid"), vocab, cfg.m_train, generated, K),
                         len(vocab), pipeline.detector_config(cfg, seed, cfg.no_mcf))
    save_detector(_path(cfg, "detector.ckpt"), res.detector, vocab)
    _write_json(_path(cfg, "detector_history.json"),
                {"history": res.history, "best_epoch": res.best_epoch, "stopped_early": res.stopped_early})
    print(f"best epoch {res.best_epoch} of {len(res.history)}")


def cmd_evaluate(cfg, args):
    det, vocab = load_detector(_path(cfg, "detector.ckpt"))
    records, _, _ = pipeline.load_corpus(cfg)
    test = split(records, "test")
    _, K_test = _counts(cfg)
    generated = _generated(cfg) if K_test else None
    if K_test and not generated:
        raise ValueError("K' > 0 but no generated comments found; run `generate` first")
    examples = make_examples(test, vocab, cfg.m_test, generated, K_test)
    report = evaluate_examples(det, examples)
    _write_json(_path(cfg, "metrics.json"), report.to_dict())
    print(report.to_json())
    if args.dump_splits:
        with open(_path(cfg, "splits.jsonl"), "w", encoding="utf-8") as fh:
            for r in test:
                texts = r.comments[: cfg.m_test] + (generated or {}).get(r.id, [])[:K_test]
                post = embed_texts(det.encoder, vocab, [r.text])
                emb = embed_texts(det.encoder, vocab, texts)
                if not len(post) or not len(emb):
                    continue
                xi = 1.0 - (emb @ post[0]) / np.sqrt((emb * emb).sum(1) * (post[0] @ post[0]))
                plus, minus = stance_split(xi, cfg.tau_value)
                fh.write(json.dumps({"post_id": r.id, "xi": xi.tolist(), "plus": plus, "minus": minus}) + "\n")


def cmd_quality(cfg, args):
    det, vocab = load_detector(_path(cfg, "detector.ckpt"))
    records, _, _ = pipeline.load_corpus(cfg)
    generated = _generated(cfg)
    if not generated:
        raise ValueError("no generated comments found; run `generate` first")
    test = [r for r in split(records, "test") if r.id in generated]
    orig = [embed_texts(det.encoder, vocab, r.comments) for r in test]
    gen = [embed_texts(det.encoder, vocab, generated[r.id]) for r in test]
    keep = [i for i in range(len(test)) if len(orig[i]) and len(gen[i])]
    out = {"sty": style_similarity([orig[i] for i in keep], [gen[i] for i in keep]),
           "div": diversity([gen[i] for i in keep]), "n_posts": len(keep)}
    _write_json(_path(cfg, "quality.json"), out)
    print(json.dumps(out, sort_keys=True))


def cmd_sweep(cfg, args):
    modes = ("raw",) if args.raw_only else ("raw", "balanced")
    result = pipeline.sweep_comments(cfg, modes=modes)
    pipeline.write_sweep(result, cfg.out_dir)
    print(f"wrote {os.path.join(cfg.out_dir, 'sweep.csv')}")


def cmd_run(cfg, args):
    report = pipeline.run_experiment(cfg)
    pipeline.write_report(report, cfg.out_dir)
    with open(_path(cfg, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    s = report["summary"]["macro_f1"]
    print(f"macro F1 {s['mean']} +/- {s['std']} over {s['n']} seeds")
    statuses = {r["status"] for r in report["seeds"]}
    if "aborted" in statuses:
        return EXIT_ABORT
    if "failed" in statuses:
        return EXIT_INVALID
    return EXIT_OK


COMMANDS = {
    "synth-data": cmd_synth_data,
    "build-knowledge": cmd_build_knowledge,
    "tune-generator": cmd_tune_generator,
    "generate": cmd_generate,
    "train-detector": cmd_train_detector,
    "evaluate": cmd_evaluate,
    "quality": cmd_quality,
    "sweep": cmd_sweep,
    "run": cmd_run,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="run a single seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset JSON-lines file (default: synthetic corpus)")
    common.add_argument("--kb", help="knowledge base JSON-lines file")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, what in (("cgt", "comment generation"), ("sa", "the adversarial style loss"),
                       ("dk", "the knowledge dataset"), ("hcr", "collaborative routing"),
                       ("mcf", "controversy fusion (use mean pooling)")):
        common.add_argument(f"--no-{flag}", dest=f"no_{flag}", action="store_true", help=f"disable {what}")
    parser = argparse.ArgumentParser(prog="earlyrumor", description="Rumour early-detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "generate":
            p.add_argument("--k", type=int, help="comments per post (default: target_total)")
            p.add_argument("--split", default="test", choices=("train", "valid", "test", "all"))
        elif name == "tune-generator":
            p.add_argument("--dump-routing", type=int, default=0, metavar="N",
                           help="write the pruned expert graph for the first N test posts")
        elif name == "evaluate":
            p.add_argument("--dump-splits", action="store_true", help="write per-post stance splits")
        elif name == "sweep":
            p.add_argument("--raw-only", action="store_true", help="skip the generated top-up grid")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        code = COMMANDS[args.command](cfg, args)
    except TrainingAborted as exc:
        print(f"training aborted: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
