import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hgcnn import landmarks as lm
from hgcnn.cli import main, resolve, build_parser
from hgcnn.model import load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("generate", "--out", d, "--seed", 7, "--subjects", 6, "--samples-per-class", 3) == 0
    return d


@pytest.fixture(scope="module")
def trained_run(dataset, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run("train", "--data", dataset, "--out", d, "--epochs", 6, "--threads", 1) == 0
    return d


class TestGenerate:
    def test_manifest_lists_subjects(self, tmp_path):
        assert run("generate", "--seed", 7, "--subjects", 10, "--samples-per-class", 1, "--out", tmp_path) == 0
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert len(man["subjects"]) == 10 and man["seed"] == 7

    def test_same_seed_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("generate", "--seed", 3, "--subjects", 2, "--samples-per-class", 1,
                       "--out", tmp_path / name) == 0
        for f in ("manifest.json", "samples.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_zero_subjects_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            run("generate", "--subjects", 0, "--out", tmp_path)
        assert info.value.code == 2

    def test_zero_subjects_from_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"subjects": 0}))
        assert run("generate", "--config", cfg, "--out", tmp_path / "d") == 2

    def test_missing_out(self):
        assert run("generate") == 2

    def test_unwritable_out(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("generate", "--out", blocker / "sub") == 2

    def test_subprocess_exit_code(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "hgcnn", "generate", "--subjects", "0",
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 2
        assert "must be >= 1" in proc.stderr


class TestConfigResolution:
    def test_flags_win(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 5, "subjects": 4}))
        opts = resolve(build_parser().parse_args(["generate", "--config", str(cfg), "--seed", "9"]))
        assert opts["seed"] == 9 and opts["subjects"] == 4 and opts["samples_per_class"] == 5

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("[1, 2]")
        assert run("generate", "--config", cfg, "--out", tmp_path) == 2
        assert run("generate", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("HGCNN_THREADS", "3")
        assert resolve(build_parser().parse_args(["generate"]))["threads"] == 3
        assert resolve(build_parser().parse_args(["generate", "--threads", "1"]))["threads"] == 1

    def test_threads_env_invalid(self, monkeypatch, tmp_path):
        monkeypatch.setenv("HGCNN_THREADS", "zero")
        assert run("generate", "--out", tmp_path) == 2


class TestTrain:
    def test_outputs(self, trained_run):
        names = set(os.listdir(trained_run))
        assert {"model.hgc", "train_log.csv", "splits.json", "config.json"} <= names
        with open(trained_run / "train_log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {"epoch", "train_loss", "dev_acc", "dev_acer"} <= set(rows[0])
        assert 1 <= len(rows) <= 6
        _, meta = load_checkpoint(trained_run / "model.hgc")
        assert meta["run"]["protocol"] == "subjects"
        assert meta["threshold"]["provenance"] in ("dev-EER", "fixed")

    def test_subject_disjoint_splits(self, trained_run):
        man = json.loads((trained_run / "splits.json").read_text())["splits"]
        subj = [set(man[k]["subjects"]) for k in ("train", "dev", "test")]
        assert not (subj[0] & subj[1] or subj[0] & subj[2] or subj[1] & subj[2])

    def test_attack_types_protocol(self, dataset, tmp_path):
        assert run("train", "--data", dataset, "--out", tmp_path, "--protocol", "attack-types",
                   "--epochs", 1, "--model", 2) == 0
        man = json.loads((tmp_path / "splits.json").read_text())["splits"]
        assert set(man["train"]["labels"]) == {"genuine", "mask"}
        assert set(man["test"]["labels"]) == {"genuine", "print", "replay"}

    def test_missing_data(self, tmp_path):
        assert run("train", "--data", tmp_path / "nope", "--out", tmp_path / "r") == 2

    def test_missing_flags(self):
        assert run("train") == 2

    def test_architecture_from_config(self, dataset, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"architecture": {"branch_widths": [4, 4], "mlp_widths": [8, 2]},
                                   "train": {"epochs": 1}}))
        assert run("train", "--config", cfg, "--data", dataset, "--out", tmp_path / "r") == 0
        model, meta = load_checkpoint(tmp_path / "r" / "model.hgc")
        assert model.cfg.branch_widths == (4, 4) and meta["train"]["epochs"] == 1

    def test_bad_architecture_key(self, dataset, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"architecture": {"widths": 3}}))
        assert run("train", "--config", cfg, "--data", dataset, "--out", tmp_path / "r") == 2


class TestEval:
    def test_report(self, trained_run, dataset, tmp_path):
        out = tmp_path / "report.json"
        assert run("eval", "--checkpoint", trained_run, "--data", dataset, "--out", out,
                   "--tdr-at", "0.01,0.05,0.10,0.20") == 0
        rep = json.loads(out.read_text())
        assert len(rep["tdr_at_fdr"]) == 4
        assert rep["threshold"]["provenance"] in ("dev-EER", "fixed")
        assert rep["split"] == "test" and rep["cross"] is False
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "id,subject,label,attack_type,score"
        test_subjects = json.loads((trained_run / "splits.json").read_text())["splits"]["test"]["subjects"]
        assert {l.split(",")[1] for l in lines[1:]} == set(test_subjects)

    def test_cross_scores_everything(self, trained_run, dataset, tmp_path):
        out = tmp_path / "r.json"
        assert run("eval", "--checkpoint", trained_run / "model.hgc", "--data", dataset / "samples.jsonl",
                   "--out", out, "--cross") == 0
        rep = json.loads(out.read_text())
        assert rep["cross"] is True and rep["n_samples"] == 6 * 4 * 3

    def test_train_split_converged_acer(self, trained_run, dataset, tmp_path):
        out = tmp_path / "r.json"
        assert run("eval", "--checkpoint", trained_run, "--data", dataset, "--out", out, "--split", "train") == 0
        assert json.loads(out.read_text())["acer"] <= 0.02

    def test_bad_tdr(self, trained_run, dataset, tmp_path):
        assert run("eval", "--checkpoint", trained_run, "--data", dataset,
                   "--out", tmp_path / "r.json", "--tdr-at", "0.1,2") == 2

    def test_missing_checkpoint(self, dataset, tmp_path):
        assert run("eval", "--checkpoint", tmp_path, "--data", dataset, "--out", tmp_path / "r.json") == 2

    def test_corrupt_checkpoint(self, dataset, tmp_path):
        (tmp_path / "model.hgc").write_bytes(b"garbage")
        assert run("eval", "--checkpoint", tmp_path, "--data", dataset, "--out", tmp_path / "r.json") == 1


@pytest.fixture(scope="module")
def matrices(trained_run, dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("dist")
    assert run("distances", "--checkpoint", trained_run, "--data", dataset, "--out", out) == 0
    return [np.loadtxt(out / f"layer{i}.csv", delimiter=",") for i in range(3)]


class TestDistances:
    def test_shape_symmetry_diagonal(self, matrices):
        for m in matrices:
            assert m.shape == (68, 68)
            np.testing.assert_array_equal(m, m.T)
            assert np.all(np.diag(m) == 0)

    def test_layer0_is_raw_features(self, matrices, trained_run, dataset):
        splits = json.loads((trained_run / "splits.json").read_text())["splits"]
        samples = lm.read_samples(dataset / "samples.jsonl")
        s = next(x for x in samples if x.subject in splits["test"]["subjects"])
        f = s.points.channels
        ref = np.sqrt(((f[:, None] - f[None]) ** 2).sum(-1))
        np.testing.assert_allclose(matrices[0], ref, atol=1e-12)

    def test_mouth_tightens_with_depth(self, matrices):
        # intra-mouth distance relative to the mean over all pairs
        mouth = list(lm.REGIONS["mouth"])

        def ratio(m):
            return m[np.ix_(mouth, mouth)].mean() / m.mean()
        assert ratio(matrices[2]) < ratio(matrices[0])

    def test_named_sample(self, trained_run, dataset, tmp_path):
        assert run("distances", "--checkpoint", trained_run, "--data", dataset, "--out", tmp_path,
                   "--sample", "s00_mask_01") == 0
        assert run("distances", "--checkpoint", trained_run, "--data", dataset, "--out", tmp_path,
                   "--sample", "nope") == 2
