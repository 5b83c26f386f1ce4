"""End-to-end command tests driving cli.main in process (plus one subprocess
check of the installed entry point). A small on-disk IDX pair keeps every
run under a few seconds."""

import json
import subprocess
import sys

import numpy as np
import pytest

from pcgraph.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OK, main)

BASE = """
[experiment]
name = "cli-smoke"
seed = 5
out_dir = "{out}"

[data]
train_limit = 96
test_limit = 32

[topology]
kind = "layered"
dims = [784, 16, 10]
label_layer = true
activation = "hardtanh"

[schedule]
T = 3
gamma_values = 0.25
alpha_weights = 1e-4
epochs = 1
batch_size = 32

[query]
T = 16
gamma_values = 0.25
chunk = 64

[[task]]
kind = "classify"
limit = 24

[[task]]
kind = "denoise"
limit = 3
corruption = "gaussian"
variance = 0.25

[baseline]
dims = [784, 16, 10]
epochs = 2
alpha = 1e-3
"""


def write_cfg(tmp_path, out_dir, text=BASE, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text.format(out=str(out_dir).replace("\\", "/")))
    return str(p)


def test_train_then_evaluate_and_query(tmp_path, idx_dir):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, out)
    assert main(["train", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_OK
    assert (out / "model.ckpt").exists()
    assert (out / "trace.csv").exists()
    report = json.loads((out / "train_report.json").read_text())
    assert report["examples"] == 96
    assert report["updates"] == 3
    assert "seconds" not in json.dumps(report)  # timings live in the CSV only

    code = main(["evaluate", "--config", cfg, "--data-dir", str(idx_dir),
                 "--checkpoint", str(out / "model.ckpt")])
    assert code == EXIT_OK
    ev = json.loads((out / "evaluate_report.json").read_text())
    assert 0.0 <= ev["accuracy"] <= 1.0
    assert ev["count"] == 32
    assert len(ev["confusion"]) == 10

    code = main(["query", "--config", cfg, "--data-dir", str(idx_dir),
                 "--checkpoint", str(out / "model.ckpt")])
    assert code == EXIT_OK
    assert (out / "classify_0.json").exists()
    assert (out / "denoise_1.json").exists()
    assert (out / "denoise_1.pgm").exists()
    den = json.loads((out / "denoise_1.json").read_text())
    assert set(den["metrics"]) == {"mse_corrupted", "mse_restored", "count"}


def test_same_seed_same_reports(tmp_path, idx_dir):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg = write_cfg(tmp_path, out, name=f"{name}.toml")
        assert main(["train", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_OK
        assert main(["evaluate", "--config", cfg, "--data-dir", str(idx_dir),
                     "--checkpoint", str(out / "model.ckpt")]) == EXIT_OK
        blob = json.loads((out / "evaluate_report.json").read_text())
        del blob["config_digest"]  # paths inside the file differ
        outs.append(json.dumps(blob, sort_keys=True))
        ckpts = (out / "model.ckpt").read_bytes()
    assert outs[0] == outs[1]


def test_invalid_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[schedule]\ngamma = 0.5\n")
    assert main(["train", "--config", str(p)]) == EXIT_CONFIG
    assert "gamma_values" in capsys.readouterr().err


def test_missing_dataset_exits_3(tmp_path):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, out,
                    BASE.replace("test_limit = 32", "test_limit = 32\nsynthesize = false"))
    code = main(["train", "--config", cfg, "--data-dir", str(tmp_path / "empty")])
    assert code == EXIT_DATA


def test_divergence_exits_4(tmp_path, idx_dir, capsys):
    out = tmp_path / "run"
    text = BASE.replace("alpha_weights = 1e-4", "alpha_weights = 1e6") \
               .replace('optimizer = "adam"', "") \
               .replace("epochs = 1", "epochs = 40\noptimizer = \"sgd\"")
    cfg = write_cfg(tmp_path, out, text)
    assert main(["train", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err


def test_missing_checkpoint_exits_2(tmp_path, idx_dir):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, out)
    code = main(["evaluate", "--config", cfg, "--data-dir", str(idx_dir),
                 "--checkpoint", str(tmp_path / "nope.ckpt")])
    assert code == EXIT_CONFIG


def test_query_without_tasks_exits_2(tmp_path, idx_dir):
    out = tmp_path / "run"
    stripped = BASE.split("[[task]]")[0] + BASE.split("[baseline]")[1].join(
        ["[baseline]", ""])
    cfg = write_cfg(tmp_path, out, stripped)
    assert main(["train", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_OK
    code = main(["query", "--config", cfg, "--data-dir", str(idx_dir),
                 "--checkpoint", str(out / "model.ckpt")])
    assert code == EXIT_CONFIG


def test_am_requires_am_task(tmp_path, idx_dir):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, out)
    assert main(["am", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_CONFIG


AM_CFG = """
[experiment]
name = "cli-am"
seed = 1
out_dir = "{out}"

[data]
train_limit = 16
with_labels = false

[topology]
kind = "fully_connected"
n = 800
activation = "hardtanh"

[schedule]
T = 3
gamma_values = 0.5
alpha_weights = 1e-4
epochs = 2
batch_size = 8

[query]
T = 8
gamma_values = 0.5

[[task]]
kind = "am"
memories = 5
corruption = "gaussian"
variance = 0.2
retrieval_T = 8
"""


def test_am_pipeline_writes_report(tmp_path, idx_dir):
    out = tmp_path / "am"
    cfg = write_cfg(tmp_path, out, AM_CFG, name="am.toml")
    assert main(["am", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_OK
    rep = json.loads((out / "am_report.json").read_text())
    assert rep["memories"] == 5
    assert 0.0 <= rep["hit_rate"] <= 1.0
    assert (out / "am_grid.pgm").exists()
    assert (out / "am_model.ckpt").exists()


def test_baseline_writes_report(tmp_path, idx_dir):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, out)
    assert main(["baseline", "--config", cfg, "--data-dir", str(idx_dir)]) == EXIT_OK
    rep = json.loads((out / "baseline_report.json").read_text())
    assert rep["dims"] == [784, 16, 10]
    assert 0.0 <= rep["accuracy"] <= 1.0


def test_installed_entry_point(tmp_path, idx_dir):
    out = tmp_path / "run"
    cfg = write_cfg(tmp_path, out)
    r = subprocess.run([sys.executable, "-m", "pcgraph.cli", "train",
                        "--config", cfg, "--data-dir", str(idx_dir)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "trained cli-smoke" in r.stdout
