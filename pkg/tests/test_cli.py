import json
import subprocess
import sys

import numpy as np
import pytest

from crossdisp.cli import main, read_config_file, UsageError
from crossdisp.dataset import deserialize
from crossdisp.metrics import read_csv

TINY = ["--depth", "1", "--num-heads", "2", "--hidden-size", "8", "--encoder-width", "8", "--num-points", "32", "--num-anchor-points", "16"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "simple"
    assert main(["gen-data", "--task", "simple", "--count", "1", "--num-anchor-points", "64", "--seed", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset), "--out", str(out), "--max-steps", "3", "--batch-size", "1", *TINY]) == 0
    return out


def test_gen_data_writes_dataset(dataset):
    (rec,) = deserialize(dataset)
    assert rec.p_a.shape == (625 - 21, 3) and rec.p_b.shape == (64, 3)
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["extra"]["config"]["task"] == "simple"


def test_train_outputs(run_dir):
    assert (run_dir / "checkpoint.ckpt").is_file()
    lines = (run_dir / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr" and len(lines) == 4
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["model"]["hidden_size"] == 8 and cfg["train"]["max_steps"] == 3


def test_train_resume_matches_uninterrupted(dataset, tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    base = ["train", "--data", str(dataset), "--max-steps", "4", "--batch-size", "1", *TINY]
    assert main([*base, "--out", str(full)]) == 0
    assert main([*base, "--out", str(part), "--checkpoint-every", "2"]) == 0
    mid = part / "checkpoint_0000002.ckpt"
    assert mid.is_file()
    (part / "loss.csv").write_text("\n".join((part / "loss.csv").read_text().splitlines()[:3]) + "\n")
    assert main(["train", "--data", str(dataset), "--out", str(part), "--resume", str(mid), *TINY]) == 0
    assert (part / "loss.csv").read_text() == (full / "loss.csv").read_text()
    assert (part / "checkpoint.ckpt").read_bytes() == (full / "checkpoint.ckpt").read_bytes()


def test_predict(dataset, run_dir, tmp_path):
    out = tmp_path / "pred.npy"
    args = ["predict", "--checkpoint", str(run_dir / "checkpoint.ckpt"), "--data", str(dataset), "--n-samples", "2", "--seed", "1", "--out", str(out)]
    assert main(args) == 0
    preds = np.load(out)
    assert preds.shape == (2, 604, 3) and np.isfinite(preds).all()
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first
    assert json.loads((tmp_path / "pred.npy.json").read_text())["shape"] == [2, 604, 3]


def test_rollout_oracle_with_log(dataset, tmp_path, capsys):
    log = tmp_path / "episode.npy"
    out = tmp_path / "rollout.json"
    assert main(["rollout", "--data", str(dataset), "--oracle", "--episode-log", str(log), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["success"] is True
    frames = np.load(log)
    assert frames.shape[1:] == (604, 3) and len(frames) > 500
    assert json.loads(out.read_text())["success"] is True


def test_eval_rmse_only(dataset, run_dir, tmp_path):
    out = tmp_path / "m.csv"
    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"), "--data", str(dataset), "--n-samples", "2", "--no-rollout", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r.metric for r in rows] == ["rmse", "coverage_rmse", "precision_rmse"]
    assert all(r.variant == "CD" and r.n == 1 and r.regime == "unseen" for r in rows)


def test_training_reproducible(dataset, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / name), "--max-steps", "2", "--seed", "7", *TINY]) == 0
    assert (tmp_path / "a" / "checkpoint.ckpt").read_bytes() == (tmp_path / "b" / "checkpoint.ckpt").read_bytes()


def test_config_file_and_override(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"# tiny run\ndata = {dataset}\nout = {tmp_path / 'cfg_run'}\nmax-steps = 2\nhidden_size = 8\nnum_heads = 2\n"
        "depth = 1\nencoder_width = 8\nnum_points = 32\nnum_anchor_points = 16\nno_augment = true\n"
    )
    assert main(["train", "--config", str(cfg), "--max-steps", "1"]) == 0
    saved = json.loads((tmp_path / "cfg_run" / "config.json").read_text())
    assert saved["train"]["max_steps"] == 1 and saved["train"]["augment_rotation"] is False
    assert saved["model"]["hidden_size"] == 8


def test_config_file_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("a-b = 1\n\n c = x y # note\n")
    assert read_config_file(p) == {"a_b": "1", "c": "x y"}
    p.write_text("nonsense\n")
    with pytest.raises(UsageError, match="key = value"):
        read_config_file(p)


def test_env_var_sets_output_root(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("CROSSDISP_OUT", str(tmp_path))
    assert main(["rollout", "--data", str(dataset), "--oracle", "--out", "sub/r.json"]) == 0
    assert (tmp_path / "sub" / "r.json").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["train", "--data", "x"],
        ["train", "--data", "x", "--out", "y", "--variant", "ZZ"],
        ["gen-data", "--out", "x", "--count", "notint"],
        ["predict", "--data", "x", "--out", "y"],
        ["rollout", "--data", "x"],
        ["eval", "--out", "y"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_invalid_inputs_exit_1(dataset, run_dir, tmp_path):
    ckpt = str(run_dir / "checkpoint.ckpt")
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    assert main(["rollout", "--data", str(dataset), "--oracle", "--record", "5"]) == 1
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["predict", "--checkpoint", str(bad), "--data", str(dataset), "--out", str(tmp_path / "p.npy")]) == 1
    assert main(["predict", "--checkpoint", ckpt, "--variant", "CP", "--data", str(dataset), "--out", str(tmp_path / "p.npy")]) == 1
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["train", "--config", str(cfg), "--data", "x", "--out", "y"]) == 1


def test_runtime_failure_exit_2(tmp_path, capsys):
    assert main(["gen-data", "--count", "1", "--max-attempts", "0", "--out", str(tmp_path / "d")]) == 2
    assert "failed" in capsys.readouterr().err


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "crossdisp.cli", "train", "--data", "nowhere", "--out", "x"], capture_output=True, text=True)
    assert res.returncode == 1 and "error" in res.stderr
