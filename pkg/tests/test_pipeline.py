import csv
import json

import pytest

from earlyrumor import instrument, pipeline
from earlyrumor.config import RunConfig

SMALL = RunConfig(n_posts=60, comments_per_post=4, vocab_size=40, m_train=4, m_test=1, target_total=4,
                  d=8, rank=2, n_experts=3, gen_epochs=1, pretrain_steps=20, gen_max_len=5,
                  max_epochs=4, patience=2, seeds=(1,), quality_k=2, sweep_counts=(1, 4))


def test_balance_counts():
    assert pipeline.balance_counts(16, 2, 16) == (0, 14)
    assert pipeline.balance_counts(1, 1, 16) == (15, 15)
    assert pipeline.balance_counts(0, 16, 16) == (16, 0)
    with pytest.raises(ValueError):
        pipeline.balance_counts(17, 2, 16)
    with pytest.raises(ValueError):
        pipeline.balance_counts(-1, 2, 16)


def _counters(cfg):
    pipeline.clear_cache()
    instrument.reset()
    rec = pipeline.run_seed(cfg, 1)
    assert rec["status"] == "ok", rec
    return rec, instrument.snapshot()


def test_full_run_touches_every_stage():
    rec, hits = _counters(SMALL)
    assert (rec["K"], rec["K_prime"]) == (0, 3)
    for stage in ("generator.pretrain", "generator.tune", "generator.generate", "knowledge.build",
                  "detector.train"):
        assert hits.get(stage, 0) > 0, stage
    assert "detector.mean_pool" not in hits
    assert set(rec["quality"]) == {"sty", "div", "div_fixed_expert", "probe_accuracy"}
    assert all("wall_ms" not in r for r in rec["tuning_log"])


def test_without_generation_no_generator_stage_runs():
    rec, hits = _counters(SMALL.with_(no_cgt=True))
    assert (rec["K"], rec["K_prime"]) == (0, 0)
    for stage in ("generator.pretrain", "generator.tune", "generator.generate", "knowledge.build"):
        assert stage not in hits, stage
    assert "quality" not in rec


def test_without_knowledge_the_dataset_is_never_built():
    _, hits = _counters(SMALL.with_(no_dk=True))
    assert "knowledge.build" not in hits and hits["generator.tune"] == 1


def test_without_fusion_the_detector_mean_pools():
    _, hits = _counters(SMALL.with_(no_mcf=True))
    assert hits.get("detector.mean_pool", 0) > 0


def test_failures_become_records(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    rec = pipeline.run_seed(SMALL.with_(data_path=str(bad)), 1)
    assert rec["status"] == "failed" and rec["stage"] == "data" and "line 1" in rec["error"]


def test_experiment_report_files(tmp_path):
    pipeline.clear_cache()
    report = pipeline.run_experiment(SMALL.with_(seeds=(1, 2)))
    assert report["complete"] and [r["seed"] for r in report["seeds"]] == [1, 2]
    assert report["summary"]["macro_f1"]["n"] == 2
    pipeline.write_report(report, tmp_path)
    assert json.loads((tmp_path / "report.json").read_text())["config"]["seeds"] == [1, 2]
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert rows[0][:3] == ["seed", "status", "accuracy"] and [r[0] for r in rows[1:]] == ["1", "2", "mean", "std"]


def test_ablation_table_has_every_variant():
    pipeline.clear_cache()
    out = pipeline.run_ablations(SMALL, ["full", "no_cgt"])
    assert set(out) == {"full", "no_cgt"} and all(v["complete"] for v in out.values())


def test_sweep_grid_shapes(tmp_path):
    pipeline.clear_cache()
    res = pipeline.sweep_comments(SMALL)
    assert res["train_counts"] == [1, 4] and res["test_counts"] == [1, 4]
    for mode in ("raw", "balanced"):
        assert len(res[mode]["mean"]) == 2 and len(res[mode]["per_seed"]) == 1
    pipeline.write_sweep(res, tmp_path)
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert len(rows) == 1 + 2 * 4
    with pytest.raises(ValueError):
        pipeline.sweep_comments(SMALL, train_counts=[8])
