import json
import subprocess
import sys

import numpy as np
import pytest

from koopman_dl import io
from koopman_dl.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from koopman_dl.experiment import ExperimentConfig, fit_model, make_dataset
from koopman_dl.errors import InvalidInputError
from koopman_dl.koopman import SnapshotDataset


def small_config(**training):
    train = {"optimizer": "adam", "learning_rate": 1e-3, "lam": 1e-6, "max_iterations": 5,
             "hidden_width": 8, "trainable_outputs": 4, "init_scale": 1.0, "record_wall_time": False}
    train.update(training)
    return {
        "version": 1,
        "system": {"name": "duffing", "n_ic": 15, "n_steps": 10},
        "dictionary": {"kind": "network"},
        "training": train,
        "evaluation": {"n_trials": 3, "n_steps": 10, "efunc_samples": 100,
                       "compare": {"sizes": [8, 10], "methods": ["edmd-dl", "rbf"]}},
        "seeds": {"data": 1, "init": 2, "eval": 3},
    }


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config()))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_generate_is_byte_identical(tmp_path, cfg_path):
    assert run("generate", "--config", cfg_path, "--out", tmp_path / "a") == EXIT_OK
    assert run("generate", "--config", cfg_path, "--out", tmp_path / "b") == EXIT_OK
    for name in ("dataset.kdld", "dataset.kdld.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_data(tmp_path, cfg_path):
    run("generate", "--config", cfg_path, "--out", tmp_path / "a")
    run("generate", "--config", cfg_path, "--out", tmp_path / "b", "--seed", 99)
    assert (tmp_path / "a/dataset.kdld").read_bytes() != (tmp_path / "b/dataset.kdld").read_bytes()


def test_full_scale_duffing_pair_count():
    doc = small_config()
    doc["system"]["n_ic"] = 1000
    ds = make_dataset(ExperimentConfig.from_dict(doc))
    assert (ds.n_samples, ds.state_dim) == (10_000, 2)


def test_full_pipeline_and_outputs(tmp_path, cfg_path, capsys):
    out = tmp_path / "run"
    assert run("generate", "--config", cfg_path, "--out", out) == EXIT_OK
    assert run("train", "--config", cfg_path, "--out", out) == EXIT_OK
    printed = capsys.readouterr().out
    assert "final J" in printed and "top eigenvalue moduli" in printed
    for mode in ("reconstruct", "eigvals", "efunc-error", "compare"):
        assert run("eval", "--config", cfg_path, "--out", out, "--mode", mode) == EXIT_OK
    header, rows = io.read_csv(out / "eigenvalues.csv")
    assert len(rows) == 1 + 2 + 4
    header, rows = io.read_csv(out / "reconstruction.csv")
    assert len(rows) == 3 * 11
    assert float(rows[0][-1]) <= 1e-8  # step 0 reproduces the initial state
    header, rows = io.read_csv(out / "compare.csv")
    assert [r[:2] for r in rows] == [["edmd-dl", "8"], ["edmd-dl", "10"], ["rbf", "8"], ["rbf", "10"]]
    assert all(r[2] == r[1] for r in rows)
    header, rows = io.read_csv(out / "history.csv")
    assert header == ["iteration", "J_k", "J_theta", "grad_norm", "seconds"]
    assert len(rows) == 5


def test_fixed_dictionary_training(tmp_path):
    doc = small_config()
    doc["dictionary"] = {"kind": "hermite", "max_degree": 2, "lambda": 1e-8}
    cfg = tmp_path / "h.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "h"
    run("generate", "--config", cfg, "--out", out)
    assert run("train", "--config", cfg, "--out", out) == EXIT_OK
    assert not (out / "history.csv").exists()
    assert io.load_model(out / "model.json").output_dim == 9


def test_identity_dynamics_smoke(tmp_path, cfg_path):
    X = np.random.default_rng(0).uniform(-2, 2, (100, 2))
    io.write_dataset(tmp_path / "id.kdld", SnapshotDataset(X, X))
    doc = small_config(max_iterations=50, lam=1e-10, tolerance=1e-6)
    cfg = tmp_path / "id.json"
    cfg.write_text(json.dumps(doc))
    assert run("train", "--config", cfg, "--out", tmp_path / "id", "--data", tmp_path / "id.kdld") == EXIT_OK
    assert io.load_model(tmp_path / "id/model.json").info["final_loss"] <= 1e-6


def test_divergence_exit_code_keeps_history(tmp_path):
    doc = small_config(optimizer="gd", learning_rate=1e4, max_iterations=50, divergence_factor=10.0)
    cfg = tmp_path / "d.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "d"
    run("generate", "--config", cfg, "--out", out)
    assert run("train", "--config", cfg, "--out", out) == EXIT_NUMERICAL
    assert (out / "history.csv").exists()
    assert not (out / "model.json").exists()


def test_eigenvalue_csv_round_trip(tmp_path, cfg_path):
    cfg = ExperimentConfig.from_dict(small_config())
    model, _ = fit_model(cfg, make_dataset(cfg))
    io.write_eigenvalues_csv(tmp_path / "a.csv", model)
    io.save_model(tmp_path / "m.json", model)
    io.write_eigenvalues_csv(tmp_path / "b.csv", io.load_model(tmp_path / "m.json"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("seeds"),
    lambda d: d["seeds"].pop("eval"),
    lambda d: d.update(version=2),
    lambda d: d["system"].update(name="lorenz"),
    lambda d: d["dictionary"].update(kind="wavelet"),
    lambda d: d["dictionary"].update(kind="ks-fourier"),
    lambda d: d["training"].update(momentum_typo=1),
    lambda d: d["system"].update(params={"tau": -1}),
])
def test_config_errors_exit_2(tmp_path, mutate):
    doc = small_config()
    mutate(doc)
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    assert run("generate", "--config", cfg, "--out", tmp_path / "x") == EXIT_USAGE


def test_usage_errors_exit_2(tmp_path, cfg_path):
    assert run("generate", "--out", tmp_path) == EXIT_USAGE
    assert run("generate", "--config", tmp_path / "missing.json") == EXIT_USAGE
    assert run("train", "--config", cfg_path, "--out", tmp_path / "empty") == EXIT_USAGE
    assert run("eval", "--config", cfg_path, "--out", tmp_path / "empty", "--mode", "eigvals") == EXIT_USAGE
    assert run("generate", "--config", cfg_path, "--out", tmp_path, "--ic-literal") == EXIT_USAGE
    assert run("inspect", tmp_path / "nothing") == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        run("eval", "--config", cfg_path, "--mode", "bogus")
    assert info.value.code == 2


def test_model_system_mismatch_exit_2(tmp_path, cfg_path):
    out = tmp_path / "r"
    run("generate", "--config", cfg_path, "--out", out)
    run("train", "--config", cfg_path, "--out", out)
    ks = {"version": 1, "system": {"name": "ks", "params": {"grid_points": 16}},
          "dictionary": {"kind": "ks-fourier"}, "seeds": {"data": 0, "init": 0, "eval": 0}}
    ks_cfg = tmp_path / "ks.json"
    ks_cfg.write_text(json.dumps(ks))
    assert run("eval", "--config", ks_cfg, "--out", out, "--mode", "eigvals") == EXIT_USAGE


def test_threads_flag_and_env(tmp_path, cfg_path, monkeypatch):
    assert run("generate", "--config", cfg_path, "--out", tmp_path, "--threads", 1) == EXIT_OK
    assert run("generate", "--config", cfg_path, "--out", tmp_path, "--threads", 0) == EXIT_USAGE
    monkeypatch.setenv("KOOPMAN_DL_THREADS", "two")
    assert run("generate", "--config", cfg_path, "--out", tmp_path) == EXIT_USAGE
    monkeypatch.setenv("KOOPMAN_DL_THREADS", "1")
    assert run("generate", "--config", cfg_path, "--out", tmp_path) == EXIT_OK


def test_inspect_outputs_json(tmp_path, cfg_path, capsys):
    run("generate", "--config", cfg_path, "--out", tmp_path)
    capsys.readouterr()
    assert run("inspect", tmp_path / "dataset.kdld") == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["type"] == "dataset" and info["n_samples"] == 150


def test_ic_literal_override_applies_to_ks():
    doc = {"version": 1, "system": {"name": "ks"}, "dictionary": {"kind": "network"},
           "seeds": {"data": 0, "init": 0, "eval": 0}}
    cfg = ExperimentConfig.from_dict(doc).with_overrides(ic_literal=True)
    assert cfg.system_object().params.ic_literal is True
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_dict(small_config()).with_overrides(ic_literal=True)


def test_console_script_entry_point(cfg_path, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "koopman_dl.cli", "inspect", str(tmp_path / "none")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "not found" in proc.stderr
