import json
import subprocess
import sys

import pytest

from earlyrumor import pipeline
from earlyrumor.cli import EXIT_INVALID, EXIT_OK, main
from earlyrumor.config import dump_config
from test_pipeline import SMALL


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(dump_config(SMALL.with_(out_dir=str(tmp_path / "out"))))
    pipeline.clear_cache()
    return path


def _lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_stagewise_workflow(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    c = ["--config", str(cfg_file)]
    assert main(["synth-data", *c]) == EXIT_OK
    assert len(_lines(out / "dataset.jsonl")) == 60 and (out / "kb.jsonl").exists()
    data = ["--data", str(out / "dataset.jsonl"), "--kb", str(out / "kb.jsonl")]
    assert main(["build-knowledge", *c, *data]) == EXIT_OK
    assert all("entities" in s for s in _lines(out / "knowledge.jsonl"))
    assert main(["tune-generator", *c, *data, "--dump-routing", "2"]) == EXIT_OK
    assert len(_lines(out / "routing.jsonl")) == 2 and len(_lines(out / "tuning_log.jsonl")) == 1
    assert main(["generate", *c, *data, "--split", "all", "--k", "3"]) == EXIT_OK
    assert len(_lines(out / "generated.jsonl")) == 60 * 3
    assert main(["train-detector", *c, *data]) == EXIT_OK
    assert "best_epoch" in json.loads((out / "detector_history.json").read_text())
    assert main(["evaluate", *c, *data, "--dump-splits"]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) >= {"accuracy", "macro_f1", "auc", "macro_precision", "macro_recall"}
    for row in _lines(out / "splits.jsonl"):
        assert sorted(row["plus"] + row["minus"]) == list(range(len(row["xi"])))
    assert main(["quality", *c, *data]) == EXIT_OK
    assert set(json.loads((out / "quality.json").read_text())) == {"sty", "div", "n_posts"}


def test_run_writes_report(cfg_file, tmp_path):
    assert main(["run", "--config", str(cfg_file), "--no-mcf"]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["config"]["no_mcf"] is True and report["complete"]
    assert (tmp_path / "out" / "config.txt").exists()


def test_invalid_inputs_exit_two(tmp_path, cfg_file, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_posts = lots\n")
    assert main(["run", "--config", str(bad)]) == EXIT_INVALID
    assert "bad value for n_posts" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(cfg_file)]) == EXIT_INVALID
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"id": "a"}\n')
    assert main(["synth-data", "--config", str(cfg_file)]) == EXIT_OK
    assert main(["train-detector", "--config", str(cfg_file), "--data", str(broken)]) == EXIT_INVALID
    assert "line 1" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "earlyrumor.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "tune-generator" in res.stdout
