import json
import subprocess
import sys

import pytest

from spectral_dp import checkpoint
from spectral_dp.cli import DEFAULT_CONFIG, main

BLOB_CONFIG = {
    "model": {
        "input_shape": [1, 1, 16],
        "classes": 2,
        "layers": [{"kind": "flatten"}, {"kind": "bcfc", "out": 16, "block": 4}, {"kind": "tanh"}, {"kind": "dense", "out": 2}],
    },
    "train": {"batch_size": 30, "epochs": 3, "learning_rate": 0.5, "clip": 1.0, "sigma": 1.0, "chunk_size": 8},
    "data": {"kind": "blobs", "dim": 16},
}


def write_config(tmp_path, cfg=BLOB_CONFIG, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_train_writes_outputs_and_summary(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out, _ = run(["train", "--config", write_config(tmp_path), "--out", str(out_dir)], capsys)
    assert code == 0
    lines = (out_dir / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert list(rec) == ["epoch", "loss", "accuracy", "epsilon", "delta", "seconds"]
    assert rec["seconds"] is None
    summary = json.loads(out.strip().splitlines()[-1])
    assert {"accuracy", "epsilon", "delta"} <= set(summary)
    spec, state, _ = checkpoint.load(out_dir / "checkpoint.ckpt")
    assert state.step == summary["steps"]
    assert not [p for p in out_dir.iterdir() if p.name.endswith(".tmp")]


def test_train_is_byte_identical_across_workers(tmp_path, capsys):
    cfg = write_config(tmp_path)
    files = []
    for i, w in enumerate(["1", "1", "8"]):
        out_dir = tmp_path / f"r{i}"
        assert run(["train", "--config", cfg, "--out", str(out_dir), "--workers", w, "--seed", "5"], capsys)[0] == 0
        files.append((out_dir / "metrics.jsonl").read_bytes())
    assert files[0] == files[1] == files[2]


def test_non_private_blobs_accuracy(tmp_path, capsys):
    cfg = json.loads(json.dumps(BLOB_CONFIG))
    cfg["train"].update(epochs=20, sigma=None)
    code, out, _ = run(["train", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "np"), "--mode", "non_private"], capsys)
    assert code == 0
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["accuracy"] >= 0.95
    assert summary["epsilon"] is None


def test_schema_error_reports_path(tmp_path, capsys):
    bad = json.loads(json.dumps(BLOB_CONFIG))
    bad["train"]["batch_size"] = -3
    code, _, err = run(["train", "--config", write_config(tmp_path, bad), "--out", str(tmp_path / "x")], capsys)
    assert code == 2
    assert "train.batch_size" in err
    assert not (tmp_path / "x").exists()
    bad = json.loads(json.dumps(BLOB_CONFIG))
    bad["model"]["layers"][1]["kind"] = "mystery"
    code, _, err = run(["train", "--config", write_config(tmp_path, bad)], capsys)
    assert code == 2 and "model" in err


def test_invalid_json_and_missing_config(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert run(["train", "--config", str(p)], capsys)[0] == 2
    assert run(["train", "--config", str(tmp_path / "nope.json")], capsys)[0] == 2


def test_missing_data_file_exit_code(tmp_path, capsys):
    cfg = {"data": {"kind": "mnist", "dir": str(tmp_path / "empty")}, "train": {"epochs": 1}}
    code, _, err = run(["train", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert "MNIST" in err or "no train-images" in err


def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = json.loads(json.dumps(BLOB_CONFIG))
    cfg["train"]["learning_rate"] = 1e308
    cfg["train"]["sigma"] = 1e10
    code, _, err = run(["train", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "nf")], capsys)
    assert code == 1
    assert "step" in err
    assert not (tmp_path / "nf" / "metrics.jsonl").exists()


def test_resume(tmp_path, capsys):
    cfg = json.loads(json.dumps(BLOB_CONFIG))
    cfg["train"]["epochs"] = 2
    short = write_config(tmp_path, cfg, "short.json")
    cfg["train"]["epochs"] = 4
    long = write_config(tmp_path, cfg, "long.json")
    run(["train", "--config", short, "--out", str(tmp_path / "a")], capsys)
    run(["train", "--config", long, "--out", str(tmp_path / "b"), "--resume", str(tmp_path / "a" / "checkpoint.ckpt")], capsys)
    run(["train", "--config", long, "--out", str(tmp_path / "c")], capsys)
    resumed = (tmp_path / "b" / "metrics.jsonl").read_text().splitlines()
    full = (tmp_path / "c" / "metrics.jsonl").read_text().splitlines()
    assert resumed == full[2:]
    assert (tmp_path / "b" / "checkpoint.ckpt").read_bytes().endswith(
        (tmp_path / "c" / "checkpoint.ckpt").read_bytes()[-100:]
    )


def test_eval(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run(["train", "--config", cfg, "--out", str(tmp_path / "e")], capsys)
    code, out, _ = run(["eval", str(tmp_path / "e" / "checkpoint.ckpt"), "--config", cfg], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "e" / "metrics.jsonl").read_text().splitlines()[-1])
    assert float(out) == pytest.approx(summary["accuracy"], abs=1e-6)
    assert run(["eval", str(tmp_path / "missing.ckpt")], capsys)[0] == 2


def test_account_table(capsys):
    code, out, _ = run(["account", "--q", "1", "--sigma", "2", "--steps", "10", "--delta", "1e-5"], capsys)
    assert code == 0
    rows = {float(l.split()[0]): float(l.split()[1]) for l in out.splitlines()[2:-1]}
    for a, rdp in rows.items():
        assert rdp == pytest.approx(a / 8 * 10, rel=1e-5)
    assert out.splitlines()[-1].startswith("epsilon=")


def test_account_zero_steps_and_monotone(capsys):
    def eps(steps):
        _, out, _ = run(["account", "--q", "0.05", "--sigma", "1.2", "--steps", str(steps)], capsys)
        return float(out.splitlines()[-1].split()[0].split("=")[1])

    import math

    assert eps(0) == pytest.approx(math.log(1e5) / 255, rel=1e-5)
    assert eps(0) < eps(10) < eps(100) < eps(1000)


def test_account_from_epochs(capsys):
    code, out, _ = run(["account", "--sigma", "2.39", "--epochs", "15", "--batch-size", "500", "--dataset-size", "10000"], capsys)
    assert code == 0
    assert "steps=300" in out and "q=0.05" in out
    assert run(["account", "--sigma", "1"], capsys)[0] == 2


@pytest.mark.parametrize("argv,predicted", [(["-N", "8", "-K", "4"], 0.5), (["-N", "4", "-K", "2", "--dims", "2"], 0.25), (["-N", "6", "-K", "6", "--sigma", "2", "-S", "0.5"], 1.0)])
def test_noise_check(argv, predicted, capsys):
    code, out, _ = run(["noise-check", *argv], capsys)
    assert code == 0
    assert f"predicted variance : {predicted:.6f}" in out


def test_noise_check_input_validation(capsys):
    assert run(["noise-check", "-N", "4", "-K", "5"], capsys)[0] == 2


def test_bench_small(capsys):
    code, out, _ = run(["bench", "--sizes", "4,8", "--repeats", "1"], capsys)
    assert code == 0
    assert "crossover" in out


def test_selftest(capsys):
    code, out, _ = run(["selftest"], capsys)
    assert code == 0
    assert "FAIL" not in out


def test_defaults_printed(capsys):
    code, out, _ = run(["--defaults"], capsys)
    assert code == 0
    assert json.loads(out) == DEFAULT_CONFIG


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spectral_dp.cli", "account", "--q", "0.1", "--sigma", "1", "--steps", "5"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "epsilon=" in proc.stdout
