import json
import shutil
import subprocess

import pytest
from test_train import tiny_config

from ccfactor.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    tiny_config(tmp_path / "run", epochs=1).save(path)
    return path


def test_gen_corpus(tmp_path, capsys):
    (tmp_path / "spec.json").write_text(json.dumps({"n_utterances": 5, "seed": 3}))
    assert main(["gen-corpus", str(tmp_path / "spec.json"), str(tmp_path / "out")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["utterances"] == 5
    assert len((tmp_path / "out" / "manifest.jsonl").read_text().splitlines()) == 5


def test_gen_corpus_rejects_bad_spec(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps({"n_contexts": 1}))
    assert main(["gen-corpus", str(tmp_path / "spec.json"), str(tmp_path / "out")]) == EXIT_VALIDATION
    (tmp_path / "spec.json").write_text(json.dumps({"colour": "blue"}))
    assert main(["gen-corpus", str(tmp_path / "spec.json"), str(tmp_path / "out")]) == EXIT_VALIDATION


def test_train_eval_report(tmp_path, config_file, capsys):
    assert main(["train", str(config_file)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 2 and "L_total" in summary["final"]
    ckpt, manifest = summary["checkpoint"], str(tmp_path / "run" / "eval_manifest.jsonl")

    assert main(["eval", ckpt, manifest, "--grid", "--probes", "--out", str(tmp_path / "r.json")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert [r["alpha"] for r in report["rows"]] == [0.0, 0.1, 0.25, 0.3]
    assert report["probes"]
    assert json.loads((tmp_path / "r.json").read_text()) == report

    assert main(["eval", ckpt, manifest, "--alpha", "0.3", "--domain", "feature"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert [r["alpha"] for r in report["rows"]] == [0.3] and report["probes"] == []

    assert main(["report", str(tmp_path / "run")]) == EXIT_OK
    outputs = json.loads(capsys.readouterr().out)
    assert (tmp_path / "run" / "epochs.csv").exists()
    assert (tmp_path / "run" / "losses.svg").read_text().lstrip().startswith("<?xml")
    assert set(outputs) == {"epochs", "svg", "summary"}


def test_train_resume_and_out_dir(tmp_path, config_file, capsys):
    assert main(["train", str(config_file), "--out-dir", str(tmp_path / "a")]) == EXIT_OK
    ckpt = json.loads(capsys.readouterr().out)["checkpoint"]
    assert ckpt.startswith(str(tmp_path / "a"))
    other = tmp_path / "other.json"
    tiny_config(tmp_path / "b", epochs=1, seed=9).save(other)
    assert main(["train", str(other), "--resume", ckpt]) == EXIT_VALIDATION


def test_validation_exit_codes(tmp_path, config_file):
    assert main(["train", str(tmp_path / "missing.json")]) == EXIT_VALIDATION
    (tmp_path / "bad.json").write_text('{"corpus": {}, "nonsense": 1}')
    assert main(["train", str(tmp_path / "bad.json")]) == EXIT_VALIDATION
    assert main(["eval", str(tmp_path / "none.fctm"), str(tmp_path / "m.jsonl")]) == EXIT_VALIDATION
    assert main(["frobnicate"]) == EXIT_VALIDATION
    assert main(["eval", "--alpha", "x"]) == EXIT_VALIDATION


def test_divergence_exits_numerical(tmp_path):
    path = tmp_path / "c.json"
    tiny_config(tmp_path / "run", epochs=1, divergence_threshold=1e-6).save(path)
    assert main(["train", str(path)]) == EXIT_NUMERICAL


def test_gradcheck(config_file, capsys):
    assert main(["gradcheck", str(config_file)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["max_relative_error"] < 1e-4
    assert main(["gradcheck", str(config_file), "--tol", "0"]) == EXIT_NUMERICAL


def test_report_needs_trace(tmp_path):
    assert main(["report", str(tmp_path)]) == EXIT_VALIDATION


@pytest.mark.skipif(shutil.which("ccfactor") is None, reason="console script not installed")
def test_console_script(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps({"n_utterances": 2}))
    proc = subprocess.run(["ccfactor", "gen-corpus", str(tmp_path / "spec.json"), str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "manifest" in proc.stdout
    proc = subprocess.run(["ccfactor", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
