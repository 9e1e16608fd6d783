"""One seed end to end at the default scale: corpus, generator, detector, quality.

Takes about a minute. The full 5-seed experiment is `earlyrumor run`. Much
smaller settings (few posts, short pretraining) leave the generator too weak
to help.
Run: python demos/quickstart.py
"""
import json

from earlyrumor import pipeline
from earlyrumor.config import RunConfig

cfg = RunConfig(seeds=(1,))

records, kb, vocab = pipeline.load_corpus(cfg)
first = records[0]
print(f"{len(records)} posts, vocabulary {len(vocab)}")
print("post    :", first.text, "| label", first.label)
print("comment :", first.comments[0])

full = pipeline.run_seed(cfg, 1)
base = pipeline.run_seed(cfg.with_(no_cgt=True), 1)
print(f"train with {full['K']} generated comments, test tops up with {full['K_prime']}")
print("macro F1 with generated comments   ", round(full["metrics"]["macro_f1"], 4))
print("macro F1 with 2 real comments only ", round(base["metrics"]["macro_f1"], 4))
print("quality", json.dumps({k: round(v, 4) for k, v in full["quality"].items()}))
