import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from videoimprint.cli import main


def _run(*argv):
    return main([str(a) for a in argv])


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _tree_digest(root, suffixes):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and p.suffix in suffixes:
            out[str(p.relative_to(root))] = _digest(p)
    return out


SMALL = ["--grid", "8x8", "--window", "4x4", "--tessellation", "2x2",
         "--tau", "2.0", "--pca-dim", "6", "--max-iters", "8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    rc = _run("synth", "--out", root, "--events", "2", "--videos-per-event", "4",
              "--frames", "10", "--feature-dim", "12", "--distractor-ratio", "0.5",
              "--seed", "3", "--window", "4x4")
    assert rc == 0
    return root


class TestSynth:
    def test_deterministic_artifacts(self, tmp_path):
        args = ["synth", "--events", "2", "--videos-per-event", "2", "--frames", "6",
                "--feature-dim", "8", "--seed", "11", "--window", "4x4"]
        assert _run(*args, "--out", tmp_path / "a") == 0
        assert _run(*args, "--out", tmp_path / "b") == 0
        da = _tree_digest(tmp_path / "a", {".impr", ".json"})
        db = _tree_digest(tmp_path / "b", {".impr", ".json"})
        assert da == db

    def test_refuses_overwrite(self, tmp_path, capsys):
        args = ["synth", "--out", tmp_path, "--events", "1", "--videos-per-event", "1",
                "--frames", "4", "--feature-dim", "4", "--window", "2x2",
                "--tessellation", "2x2", "--queries-per-event", "1"]
        assert _run(*args) == 0
        assert _run(*args) == 2
        assert "overwrite" in capsys.readouterr().err

    def test_effective_config_echoed(self, tmp_path):
        assert _run("synth", "--out", tmp_path, "--events", "1",
                    "--videos-per-event", "1", "--frames", "4",
                    "--feature-dim", "4", "--window", "2x2",
                    "--tessellation", "2x2", "--queries-per-event", "1",
                    "--seed", "9") == 0
        cfg = json.loads((tmp_path / "effective_config.json").read_text())
        assert cfg["seed"] == 9
        assert cfg["window"] == [2, 2]


class TestImprintStage:
    @pytest.mark.parametrize("model", ["tcg", "epitome", "epitome2step"])
    def test_pipeline_to_eval(self, dataset, tmp_path, model):
        imprints = tmp_path / "imprints"
        extra = ["--d", "6"] if model == "epitome2step" else []
        assert _run("imprint", "--manifest", dataset / "manifest.json",
                    "--out", imprints, "--model", model, *SMALL, *extra) == 0
        store = tmp_path / "store.vvec"
        assert _run("aggregate", "--manifest", dataset / "manifest.json",
                    "--imprints", imprints, "--out", store,
                    "--model", model, *SMALL) == 0
        run_file = tmp_path / "run.txt"
        assert _run("retrieve", "--manifest", dataset / "manifest.json",
                    "--store", store, "--out", run_file) == 0
        report = tmp_path / "report.json"
        assert _run("eval", "--run", run_file, "--manifest",
                    dataset / "manifest.json", "--out", report) == 0
        doc = json.loads(report.read_text())
        assert 0.0 <= doc["overall"] <= 1.0
        assert len(doc["per_event"]) == 2

    def test_worker_count_invariance(self, dataset, tmp_path):
        out1, out2 = tmp_path / "w1", tmp_path / "w4"
        base = ["imprint", "--manifest", dataset / "manifest.json",
                "--model", "tcg", *SMALL, "--seed", "5"]
        assert _run(*base, "--out", out1, "--workers", "1") == 0
        assert _run(*base, "--out", out2, "--workers", "4") == 0
        d1 = _tree_digest(out1, {".tcgi"})
        d2 = _tree_digest(out2, {".tcgi"})
        assert d1 == d2 and len(d1) == 12

    def test_workers_env_override(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("VIDEOIMPRINT_WORKERS", "3")
        out = tmp_path / "env"
        assert _run("imprint", "--manifest", dataset / "manifest.json",
                    "--model", "tcg", *SMALL, "--out", out) == 0
        assert len(list(out.glob("*.tcgi"))) == 12


class TestTrainRecount:
    def test_train_then_recount(self, dataset, tmp_path):
        imprints = tmp_path / "imprints"
        assert _run("imprint", "--manifest", dataset / "manifest.json",
                    "--out", imprints, "--model", "epitome", *SMALL) == 0
        model = tmp_path / "model.rnet"
        assert _run("train", "--manifest", dataset / "manifest.json",
                    "--imprints", imprints, "--out", model,
                    "--model", "epitome", *SMALL, "--hops", "2",
                    "--epochs", "6") == 0
        assert model.exists()
        assert Path(str(model) + ".pca.npz").exists()
        recount_dir = tmp_path / "recount"
        some_imprint = sorted(imprints.glob("*.epit"))[0]
        assert _run("recount", "--imprint", some_imprint, "--net", model,
                    "--out", recount_dir, "--model", "epitome", *SMALL) == 0
        assert (recount_dir / "importance.csv").exists()
        assert len(list(recount_dir.glob("frame_*.png"))) == 10


class TestBench:
    def test_bench_writes_csv(self, tmp_path):
        out = tmp_path / "bench.csv"
        assert _run("bench", "--out", out, "--feature-dim", "32", "--d", "8",
                    "--frames", "12", "--grid", "6x6", "--window", "3x3",
                    "--tessellation", "3x3", "--max-iters", "4") == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "D,d,seconds_full,seconds_two_step,speedup,max_abs_dlogq"
        fields = lines[1].split(",")
        assert fields[0] == "32" and fields[1] == "8"
        assert float(fields[2]) > 0 and float(fields[3]) > 0


class TestErrors:
    def test_missing_manifest_is_parse_error(self, tmp_path, capsys):
        rc = _run("imprint", "--manifest", tmp_path / "nope.json",
                  "--out", tmp_path / "o")
        assert rc == 1  # OSError from reading a missing file
        err = capsys.readouterr().err
        assert "error" in err

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"not_a_key": 1}))
        rc = _run("synth", "--config", cfg, "--out", tmp_path / "o")
        assert rc == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_invalid_geometry(self, tmp_path, capsys):
        rc = _run("synth", "--out", tmp_path / "o", "--window", "5x5",
                  "--tessellation", "2x2")
        assert rc == 2
        assert "divisible" in capsys.readouterr().err

    def test_config_file_plus_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 5, "window": [2, 2],
                                   "tessellation": [2, 2], "grid": [6, 6]}))
        out = tmp_path / "ds"
        assert _run("synth", "--config", cfg, "--out", out, "--seed", "8",
                    "--events", "1", "--videos-per-event", "1", "--frames", "4",
                    "--feature-dim", "4", "--queries-per-event", "1") == 0
        doc = json.loads((out / "effective_config.json").read_text())
        assert doc["seed"] == 8  # flag wins
        assert doc["grid"] == [6, 6]  # file survives
