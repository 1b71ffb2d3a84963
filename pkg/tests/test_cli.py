import json

import numpy as np
import pytest

from crossnet.cli import main
from crossnet.gibbs import SamplerError


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> fit -> summarize -> strategies -> diagnostics on a tiny dataset, twice."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "sim.json"
    cfg.write_text(json.dumps({"n": 16, "n_i": 60}))
    dirs = []
    for name in ("a", "b"):
        data, out = root / f"data_{name}", root / f"run_{name}"
        assert run("simulate", "--out", data, "--config", cfg, "--seed", 4) == 0
        assert run("fit", "--choices", data / "choices.csv", "--networks", data / "networks.csv", "--out", out,
                   "--iters", 40, "--burnin", 10, "--thin", 3, "--H", 3, "--R", 2, "--progress", 0) == 0
        assert run("summarize", "--run", out, "--iters", 30, "--burnin", 10) == 0
        assert run("strategies", "--run", out, "--multi", 2) == 0
        assert run("diagnostics", "--run", out) == 0
        dirs.append((data, out))
    return root, dirs


def test_simulate_default_shape(tmp_path):
    assert run("simulate", "--out", tmp_path) == 0
    lines = (tmp_path / "choices.csv").read_text().splitlines()
    assert len(lines) == 201 and lines[0].count(",") == 15
    assert (tmp_path / "networks.csv").read_text().splitlines()[0].count(",") == 105
    assert json.loads((tmp_path / "run.json").read_text())["status"] == "completed"


def test_artifacts_present(pipeline):
    _, [(_, out), _] = pipeline
    for name in ("run.json", "trace.jsonl", "log_joint.csv", "hyperparameters.json", "summary.json",
                 "p_hat.csv", "pibar_hat.csv", "draws.npz", "strategies.csv", "strategies.json",
                 "diagnostics.json", "auc.csv", "roc.csv"):
        assert (out / name).exists(), name
    assert len((out / "trace.jsonl").read_text().splitlines()) == 10     # (40 - 10) / 3
    meta = json.loads((out / "run.json").read_text())
    assert meta["status"] == "completed" and meta["config"]["seed"] == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert 0 <= diag["max_epsilon"] <= 1 and diag["n_agencies"] == 16


def test_same_seed_same_bytes(pipeline):
    _, [(data_a, out_a), (data_b, out_b)] = pipeline
    for name in ("choices.csv", "networks.csv", "truth.json"):
        assert (data_a / name).read_bytes() == (data_b / name).read_bytes()
    for name in ("trace.jsonl", "log_joint.csv", "summary.json", "p_hat.csv", "pibar_hat.csv",
                 "strategies.csv", "strategies.json", "diagnostics.json", "auc.csv", "roc.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_multi_one_matches_default_table(pipeline):
    _, [(_, out), _] = pipeline
    doc = json.loads((out / "strategies.json").read_text())
    singles = {(r["cluster"], r["v"]): r["products"] for r in doc["multi_offer"]["1"]}
    for row in doc["strategies"]:
        assert singles[(row["cluster"], row["v"])] == [row["u_best"]]


def test_multi_above_three_refused(pipeline, capsys):
    _, [(_, out), _] = pipeline
    assert run("strategies", "--run", out, "--multi", 4) == 2
    assert "exhaustive" in capsys.readouterr().err


def test_missing_networks_file(tmp_path, capsys):
    run("simulate", "--out", tmp_path / "d", "--config", _small(tmp_path))
    code = run("fit", "--choices", tmp_path / "d" / "choices.csv", "--networks", tmp_path / "nope.csv",
               "--out", tmp_path / "r")
    assert code == 2 and "--networks" in capsys.readouterr().err


def _small(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({"n": 8, "n_i": 20}))
    return path


def test_bad_config_reports_path(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": "many"}))
    assert run("simulate", "--out", tmp_path / "x", "--config", bad) == 2
    assert "$.n" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run("simulate", "--out", tmp_path / "x", "--config", bad) == 2


def test_summarize_without_trace(tmp_path, capsys):
    (tmp_path / "run.json").write_text(json.dumps({"config": {}}))
    assert run("summarize", "--run", tmp_path) == 2
    assert "fit" in capsys.readouterr().err


def test_malformed_input_exit_code(tmp_path):
    (tmp_path / "c.csv").write_text("agency_id,n_1,n_2\na,1,x\n")
    (tmp_path / "n.csv").write_text("agency_id,e_1\na,1\n")
    assert run("fit", "--choices", tmp_path / "c.csv", "--networks", tmp_path / "n.csv", "--out", tmp_path / "r") == 2


def test_sampler_failure_recorded(tmp_path, monkeypatch):
    run("simulate", "--out", tmp_path / "d", "--config", _small(tmp_path))

    def boom(*args, **kwargs):
        raise SamplerError("precision not positive definite", 7)

    monkeypatch.setattr("crossnet.cli.run_chain", boom)
    code = run("fit", "--choices", tmp_path / "d" / "choices.csv", "--networks", tmp_path / "d" / "networks.csv",
               "--out", tmp_path / "r", "--iters", 10, "--burnin", 2)
    meta = json.loads((tmp_path / "r" / "run.json").read_text())
    assert code == 1 and meta["status"] == "failed" and meta["iteration"] == 7


def test_bad_flags_exit_two(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["fit", "--choices", "x"])
    assert info.value.code == 2
    run("simulate", "--out", tmp_path / "d", "--config", _small(tmp_path))
    assert run("fit", "--choices", tmp_path / "d" / "choices.csv", "--networks", tmp_path / "d" / "networks.csv",
               "--out", tmp_path / "r", "--iters", 10, "--burnin", 10) == 2
