import json

import numpy as np
import pytest

from transcf.checkpoint import load_checkpoint
from transcf.cli import EXIT_DIVERGED, EXIT_MISMATCH, EXIT_MISSING, main

FAST = ["--dim", "4", "--epochs", "3", "--negatives-per-user", "10", "--batch-size", "50"]


@pytest.fixture(scope="module")
def splitdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    lines = []
    for u in range(30):
        for k, i in enumerate(rng.choice(20, size=8, replace=False)):
            lines.append(f"user{u}\titem{i}\t{rng.integers(1, 6)}\t{k}\n")
    log = root / "log.tsv"
    log.write_text("".join(lines))
    out = root / "split"
    assert main(["split", str(log), str(out), "--min-count", "2"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(splitdir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", str(splitdir), str(out), *FAST]) == 0
    return out


def test_split_outputs(splitdir):
    for name in ("train.tsv", "validation.tsv", "test.tsv", "manifest.json"):
        assert (splitdir / name).exists()
    m = json.loads((splitdir / "manifest.json").read_text())
    n_lines = sum(len((splitdir / f).read_text().splitlines()) for f in ("train.tsv", "validation.tsv", "test.tsv"))
    assert m["n_interactions"] == n_lines
    assert len((splitdir / "test.tsv").read_text().splitlines()) == m["n_users"]


def test_missing_input_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.tsv"
    assert main(["split", str(missing), str(tmp_path / "o")]) == EXIT_MISSING
    assert str(missing) in capsys.readouterr().err
    assert main(["evaluate", str(tmp_path / "ck.txt"), str(tmp_path)]) == EXIT_MISSING


def test_train_outputs(trained):
    for name in ("checkpoint.txt", "train_log.csv", "timings.csv", "test_report.json", "manifest.json", "summary.json"):
        assert (trained / name).exists()
    rows = (trained / "train_log.csv").read_text().splitlines()
    assert rows[0].startswith("epoch,") and len(rows) == 4


def test_variant_recorded(splitdir, tmp_path):
    assert main(["train", str(splitdir), str(tmp_path), *FAST, "--variant", "cml"]) == 0
    model, _, _, header = load_checkpoint(tmp_path / "checkpoint.txt")
    assert header["variant"] == "cml"
    assert model.variant.value == "cml"


def test_multiple_seeds(splitdir, tmp_path):
    assert main(["train", str(splitdir), str(tmp_path), *FAST, "--epochs", "1", "--seeds", "5"]) == 0
    assert len(list(tmp_path.glob("seed_*/checkpoint.txt"))) == 5
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["runs"]) == 5
    hr = [r["HR"]["10"] for r in summary["runs"]]
    assert summary["mean"]["HR@10"] == pytest.approx(np.mean(hr), abs=1e-12)
    assert summary["std"]["HR@10"] == pytest.approx(np.std(hr), abs=1e-12)


def test_manifest_rerun_is_byte_identical(splitdir, trained, tmp_path):
    assert main(["train", str(splitdir), str(tmp_path), "--manifest", str(trained / "manifest.json")]) == 0
    for name in ("train_log.csv", "checkpoint.txt", "test_report.json"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_evaluate_output(splitdir, trained, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    ck = str(trained / "checkpoint.txt")
    assert main(["evaluate", ck, str(splitdir), "--cutoffs", "10,20", "-o", str(a)]) == 0
    assert main(["evaluate", ck, str(splitdir), "--cutoffs", "10,20", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    assert sum(len(v) for v in rep.values()) == 4
    assert rep["HR"]["20"] >= rep["HR"]["10"]
    assert a.read_text() == (trained / "test_report.json").read_text()


def test_evaluate_per_user(splitdir, trained, tmp_path):
    out = tmp_path / "users.csv"
    assert main(["evaluate", str(trained / "checkpoint.txt"), str(splitdir), "-o", str(tmp_path / "r.json"),
                 "--per-user", str(out)]) == 0
    n_test = len((splitdir / "test.tsv").read_text().splitlines())
    assert len(out.read_text().splitlines()) == n_test + 1


def test_dimension_mismatch(splitdir, trained, tmp_path):
    lines = (trained / "checkpoint.txt").read_text().splitlines()
    ku = lines.index("[users]")
    # drop one user row so the checkpoint no longer covers the split
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(lines[:ku + 1] + lines[ku + 2:]) + "\n")
    assert main(["evaluate", str(bad), str(splitdir)]) == EXIT_MISMATCH


def test_divergence_exit_code(splitdir, tmp_path):
    with np.errstate(all="ignore"):
        code = main(["train", str(splitdir), str(tmp_path), *FAST, "--lr", "1e308", "--margin", "3"])
    assert code == EXIT_DIVERGED


def test_env_override_and_flag_precedence(splitdir, tmp_path, monkeypatch):
    monkeypatch.setenv("TRANSCF_DIM", "6")
    assert main(["train", str(splitdir), str(tmp_path / "env"), "--epochs", "1"]) == 0
    assert load_checkpoint(tmp_path / "env" / "checkpoint.txt")[0].dim == 6
    assert main(["train", str(splitdir), str(tmp_path / "flag"), "--epochs", "1", "--dim", "3"]) == 0
    assert load_checkpoint(tmp_path / "flag" / "checkpoint.txt")[0].dim == 3


def test_config_file(splitdir, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# run settings\ndim=5\nepochs=1\nvariant=transcf-alt\n")
    assert main(["train", str(splitdir), str(tmp_path / "o"), "--config", str(cfg)]) == 0
    model = load_checkpoint(tmp_path / "o" / "checkpoint.txt")[0]
    assert (model.dim, model.variant.value) == (5, "transcf-alt")


def test_analyze(splitdir, trained, tmp_path):
    train_rows = [l.split("\t") for l in (splitdir / "train.tsv").read_text().splitlines()[:3]]
    labels = tmp_path / "labels.tsv"
    labels.write_text("".join(f"{r[0]}\t{r[1]}\ttag\n" for r in train_rows))
    out, vecs = tmp_path / "diag.json", tmp_path / "vecs.tsv"
    code = main(["analyze", str(trained / "checkpoint.txt"), str(splitdir), "--ratings",
                 "--labels", str(labels), "--export", str(vecs), "-o", str(out)])
    assert code == 0
    diag = json.loads(out.read_text())
    assert diag["n_observed"] > 0 and diag["rating_groups"]
    assert len(vecs.read_text().splitlines()) == 4


def test_analyze_cml_fails(splitdir, tmp_path):
    assert main(["train", str(splitdir), str(tmp_path), *FAST, "--variant", "cml"]) == 0
    assert main(["analyze", str(tmp_path / "checkpoint.txt"), str(splitdir)]) == 1


def test_export(trained, tmp_path):
    assert main(["export", str(trained / "checkpoint.txt"), str(tmp_path), "--binary"]) == 0
    model, utoks, _, _ = load_checkpoint(trained / "checkpoint.txt")
    users = (tmp_path / "users.tsv").read_text().splitlines()
    assert len(users) == len(utoks)
    z = np.load(tmp_path / "embeddings.npz")
    assert np.array_equal(z["users"], model.alpha)
