import json
import subprocess
import sys

import numpy as np
import pytest

from xbm.cli import main
from xbm.data import load_checkpoint, save_delimited, synth_clusters
from xbm.memory import load_snapshot

SMALL = """\
seed = 1
iterations = 40
warmup_iterations = 10
lr_decay_at = [30]
hidden_dims = [16]
embedding_dim = 4

[data]
num_classes = 8
per_class = 6
d_in = 6
num_superclasses = 2
nuisance_dims = 2

[drift]
steps = [5, 10]
every = 10
probe_size = 16
lemma_trials = 20

[eval]
ks = [1, 2, 5]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


class TestTrain:
    def test_artifacts(self, tmp_path, cfg):
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 1 and manifest["config"]["iterations"] == 40
        assert manifest["config"]["loss.scheme"] == "contrastive"  # defaults are materialized
        header, rows = read_csv(out / "metrics.csv")
        assert header == ["iter", "phase", "loss", "valid_neg_mem", "valid_neg_batch", "lr"]
        assert len(rows) == 40
        assert not (out / "metrics.csv.partial").exists()
        assert load_checkpoint(out / "checkpoint.bin").dims == [6, 16, 4]
        assert len(load_snapshot(out / "memory.bin")) == 32  # 48 rows, 2 of 6 per class held out

    def test_baseline_flag(self, tmp_path, cfg):
        out = tmp_path / "base"
        assert main(["train", "--config", str(cfg), "--set", "xbm.enabled=false", "--out", str(out)]) == 0
        _, rows = read_csv(out / "metrics.csv")
        assert {r[1] for r in rows} == {"batch"}
        assert not (out / "memory.bin").exists()

    def test_manifest_rerun_is_identical(self, tmp_path, cfg):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg), "--set", "xbm.memory_ratio=0.5", "--out", str(a)]) == 0
        assert main(["train", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()

    def test_seed_flag_and_default_out_root(self, tmp_path, cfg, monkeypatch):
        monkeypatch.setenv("XBM_OUT_ROOT", str(tmp_path / "root"))
        assert main(["train", "--config", str(cfg), "--seed", "9"]) == 0
        manifest = json.loads((tmp_path / "root" / "train-seed9" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 9

    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "nope.toml"
        assert main(["train", "--config", str(missing)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_unknown_key(self, cfg, capsys):
        assert main(["train", "--config", str(cfg), "--set", "xbm.ratio=0.5"]) == 2
        assert "xbm.ratio" in capsys.readouterr().err

    def test_invalid_value_names_key(self, cfg, capsys):
        assert main(["train", "--config", str(cfg), "--set", "xbm.memory_ratio=2.0"]) == 2
        assert "xbm.memory_ratio" in capsys.readouterr().err

    def test_bad_type_names_key(self, cfg, capsys):
        assert main(["train", "--config", str(cfg), "--set", "iterations=abc"]) == 2
        assert "iterations" in capsys.readouterr().err


class TestEval:
    @pytest.fixture
    def run(self, tmp_path, cfg):
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        return out

    def test_report_rows(self, tmp_path, cfg, run):
        out = tmp_path / "ev"
        code = main(["eval", "--config", str(cfg), "--checkpoint", str(run / "checkpoint.bin"), "--ks", "1,2,5", "--out", str(out)])
        assert code == 0
        header, rows = read_csv(out / "recall.csv")
        assert header == ["k", "recall"]
        assert [int(r[0]) for r in rows] == [1, 2, 5]
        report = json.loads((out / "recall.json").read_text())
        assert report["self_excluded"] is True and report["query_count"] == 16

    def test_k_beyond_gallery(self, tmp_path, cfg, run):
        code = main(["eval", "--config", str(cfg), "--checkpoint", str(run / "checkpoint.bin"), "--ks", "1,1000", "--out", str(tmp_path / "x")])
        assert code != 0

    def test_incompatible_dataset(self, tmp_path, cfg, run, capsys):
        data = tmp_path / "d.csv"
        save_delimited(synth_clusters(3, 4, 9, 1.0, 0.1, seed=0), data, header=False)
        code = main(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(data), "--ks", "1", "--out", str(tmp_path / "x")])
        assert code == 2
        assert "features" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.bin"), "--out", str(tmp_path / "x")]) == 2
        assert "none.bin" in capsys.readouterr().err

    def test_perfect_clusters(self, tmp_path):
        data = tmp_path / "easy.csv"
        save_delimited(synth_clusters(6, 10, 4, 5.0, 0.05, seed=2), data, header=False)
        cfg = tmp_path / "easy.toml"
        cfg.write_text(
            f'iterations = 150\nwarmup_iterations = 50\nlr_decay_at = []\nhidden_dims = [16]\nembedding_dim = 4\n'
            f'[data]\nsource = "csv"\npath = "{data}"\n'
        )
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
        assert main(["eval", "--checkpoint", str(tmp_path / "r" / "checkpoint.bin"), "--data", str(data), "--ks", "1", "--out", str(tmp_path / "e")]) == 0
        _, rows = read_csv(tmp_path / "e" / "recall.csv")
        assert float(rows[0][1]) >= 0.95


class TestDriftAndStats:
    def test_drift_steps(self, tmp_path, cfg):
        out = tmp_path / "dr"
        assert main(["drift", "--config", str(cfg), "--out", str(out)]) == 0
        header, rows = read_csv(out / "drift.csv")
        assert header == ["t", "delta_t", "mean_drift", "p50_drift", "p95_drift"]
        assert {int(r[1]) for r in rows} == {5, 10}
        _, lemma = read_csv(out / "lemma.csv")
        assert len(lemma) == 20

    def test_drift_schedule_error(self, tmp_path, cfg):
        assert main(["drift", "--config", str(cfg), "--set", "drift.steps=[100]", "--out", str(tmp_path / "x")]) == 2

    def test_stats_memory_run(self, tmp_path, cfg):
        run = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(run)])
        assert main(["stats", str(run), "--window", "5"]) == 0
        header, rows = read_csv(run / "mining.csv")
        assert header == ["iter", "valid_mem", "valid_batch", "mean_mem", "mean_batch"]
        assert len(rows) == 30 and int(rows[0][0]) == 10

    def test_stats_baseline_run(self, tmp_path, cfg, capsys):
        run = tmp_path / "base"
        main(["train", "--config", str(cfg), "--set", "xbm.enabled=false", "--out", str(run)])
        assert main(["stats", "--out", str(run)]) == 0
        assert "no memory phase" in capsys.readouterr().err
        _, rows = read_csv(run / "mining.csv")
        assert {r[1] for r in rows} == {"0"}

    def test_stats_missing_run(self, tmp_path, capsys):
        assert main(["stats", str(tmp_path)]) == 2
        assert "metrics.csv" in capsys.readouterr().err


class TestEntryPoint:
    def test_unknown_subcommand(self):
        proc = subprocess.run([sys.executable, "-m", "xbm", "fly"], capture_output=True, text=True)
        assert proc.returncode != 0
        assert "usage" in proc.stderr

    def test_help(self):
        proc = subprocess.run([sys.executable, "-m", "xbm", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "train" in proc.stdout and "stats" in proc.stdout
