import json
import os

import numpy as np
import pytest

from dilar import cli


def run(tmp_path, *args):
    cwd = os.getcwd()
    os.chdir(tmp_path)
    try:
        return cli.main(list(args))
    finally:
        os.chdir(cwd)


def write_config(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


SMALL_FIT = {"max_iters": 40, "l0": 20, "dl": 20}


def test_generate_default_and_sidecar(tmp_path):
    assert run(tmp_path, "generate", "--seed", "5") == 0
    lines = (tmp_path / "dataset.csv").read_text().splitlines()
    assert lines[0] == "t,u,omega,alpha"
    assert len(lines) == 1001
    side = json.loads((tmp_path / "dataset.json").read_text())
    assert side["seed"] == 5 and side["split_index"] == 500
    assert side["truth"]["c_viscous"] == 0.3


def test_generate_short_and_deterministic(tmp_path):
    args = ("generate", "--set", "generate.chirp.duration=10", "--set", "generate.out=a.csv")
    assert run(tmp_path, *args) == 0
    first = (tmp_path / "a.csv").read_bytes()
    assert run(tmp_path, *args) == 0
    assert (tmp_path / "a.csv").read_bytes() == first
    assert len(first.decode().splitlines()) == 101


def test_generate_invalid_spec_is_usage_error(tmp_path):
    assert run(tmp_path, "generate", "--set", "generate.truth.c_viscous=-1") == 2
    assert run(tmp_path, "generate", "--set", "generate.truth.colour=1") == 2
    assert run(tmp_path, "generate", "--set", "generate.out=missing_dir/x.csv") == 2
    assert not (tmp_path / "dataset.csv").exists()


def test_bad_config_file(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    assert run(tmp_path, "generate", "--config", "bad.json") == 2
    assert run(tmp_path, "generate", "--config", "absent.json") == 2
    assert run(tmp_path, "fit", "--set", "noequals") == 2
    with pytest.raises(SystemExit) as info:
        run(tmp_path, "train")
    assert info.value.code == 2


def test_fit_then_eval(tmp_path):
    assert run(tmp_path, "generate", "--set", "generate.chirp.duration=30") == 0
    cfg = write_config(tmp_path, {"fit": {"variant": "dilar", "hidden": [6], "options": SMALL_FIT}})
    assert run(tmp_path, "fit", "--config", cfg) == 0
    ck = json.loads((tmp_path / "checkpoint.json").read_text())
    assert [e["name"] for e in ck["entries"]] == ["theta", "phi", "x0_lat"]
    assert ck["meta"] == {"variant": "dilar", "hidden": [6]}
    report = json.loads((tmp_path / "fit_report.json").read_text())
    assert len(report["losses"]) == 40 and report["variant"] == "dilar"
    assert run(tmp_path, "eval", "--set", "eval.trajectory=traj.csv") == 0
    ev = json.loads((tmp_path / "eval_report.json").read_text())
    assert ev["status"] == "ok" and ev["max_residual_power"] <= 0.0
    assert (tmp_path / "traj.csv").read_text().startswith("t,u,omega_pred,alpha_pred,alphadot_pred")


def test_fit_npm_on_nominal_data_reaches_threshold(tmp_path):
    truth = {"c_viscous": 0, "c_coulomb": 0, "d_stray": 0, "noise_std": [0, 0], "substeps": 1}
    cfg = write_config(tmp_path, {"generate": {"truth": truth}, "fit": {"variant": "npm"}})
    assert run(tmp_path, "generate", "--config", cfg) == 0
    assert run(tmp_path, "fit", "--config", cfg) == 0
    report = json.loads((tmp_path / "fit_report.json").read_text())
    assert report["final_loss"] < report["loss_threshold"]
    assert report["final_length"] == 499


def test_fit_missing_dataset_writes_nothing(tmp_path):
    assert run(tmp_path, "fit", "--set", "fit.dataset=nope.csv") == 2
    assert sorted(os.listdir(tmp_path)) == []


def test_fit_malformed_dataset(tmp_path):
    (tmp_path / "dataset.csv").write_text("t,u,omega,alpha\n0,1,2,3\n0.1,1,oops,3\n")
    assert run(tmp_path, "fit") == 3
    assert not (tmp_path / "checkpoint.json").exists()


def test_fit_divergence_is_fit_failure(tmp_path):
    assert run(tmp_path, "generate", "--set", "generate.chirp.duration=20") == 0
    cfg = write_config(tmp_path, {"fit": {
        "variant": "npm", "theta_init": [2.0, -4.0, 1e8, 16.0, 8.0],
        "options": {"max_iters": 5, "retry_budget": 1},
    }})
    assert run(tmp_path, "fit", "--config", cfg) == 4


def test_eval_rejects_layout_mismatch(tmp_path):
    assert run(tmp_path, "generate", "--set", "generate.chirp.duration=20") == 0
    cfg = write_config(tmp_path, {"fit": {"variant": "dilar", "hidden": [6], "options": SMALL_FIT}})
    assert run(tmp_path, "fit", "--config", cfg) == 0
    assert run(tmp_path, "eval", "--set", "eval.hidden=[7]") == 3


def test_compare_single_variant_and_determinism(tmp_path):
    cfg = {"compare": {
        "chirp": {"duration": 20.0}, "truth": {"split_index": 100}, "hidden": [6],
        "variants": ["dilar"], "fit": {"dilar": SMALL_FIT},
    }}
    path = write_config(tmp_path, cfg)
    assert run(tmp_path, "compare", "--config", path, "--set", "compare.out_dir=a") == 0
    assert run(tmp_path, "compare", "--config", path, "--set", "compare.out_dir=b") == 0
    rows = json.loads((tmp_path / "a" / "rmse_table.json").read_text())["rows"]
    assert {r["variant"] for r in rows} == {"dilar"}
    for name in ("rmse_table.csv", "rmse_table.json", "trajectory_dilar.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_override_parsing():
    cfg = {"a": {"b": 1}}
    cli.apply_override(cfg, "a.c=[1, 2]")
    cli.apply_override(cfg, "a.d=text")
    cli.apply_override(cfg, "e.f=2.5")
    assert cfg == {"a": {"b": 1, "c": [1, 2], "d": "text"}, "e": {"f": 2.5}}
    with pytest.raises(cli.UsageError):
        cli.apply_override(cfg, "a.b.c=1")


def test_log_level_env(monkeypatch, tmp_path):
    monkeypatch.setenv("DILAR_LOG", "debug")
    assert run(tmp_path, "generate", "--set", "generate.chirp.duration=5") == 0
    assert np.loadtxt(tmp_path / "dataset.csv", delimiter=",", skiprows=1).shape == (50, 4)
