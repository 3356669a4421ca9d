import json

import pytest

from risktrajopt.cli import RunConfig, cell_name, load_run_config, main
from risktrajopt.errors import ConfigurationError

ARTIFACTS = ["controls.csv", "rollout.csv", "report.json", "validation.json", "histogram.csv"]


def write_config(path, **kv):
    base = {
        "scenario": "drone",
        "methods": "deterministic",
        "alphas": "0.1",
        "samples": "10",
        "optimization_seed": "0",
        "validation_seed": "0",
        "output_dir": str(path.parent / "out"),
    }
    base.update({k: str(v) for k, v in kv.items()})
    lines = ["[run]"] + [f"{k} = {v}" for k, v in base.items()]
    lines += ["", "[validation]", "n_val = 200", "", "[solver]", "max_iterations = 4"]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_minimal_deterministic_run(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini")
    assert main([str(cfg_path)]) == 0
    out = tmp_path / "out"
    cell = out / "deterministic"
    for name in ARTIFACTS:
        assert (cell / name).exists(), name
    rows = (out / "summary.csv").read_text().strip().splitlines()
    assert len(rows) == 2  # header + one cell


def test_alpha_sweep_row_count(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", methods="saa", alphas="0.2, 0.3")
    assert main([str(cfg_path)]) == 0
    rows = (tmp_path / "out" / "summary.csv").read_text().strip().splitlines()
    assert len(rows) == 3
    assert (tmp_path / "out" / "saa_alpha0.2").is_dir()
    assert (tmp_path / "out" / "saa_alpha0.3").is_dir()


def test_invalid_alpha_rejected_without_artifacts(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", alphas="1.5")
    code = main([str(cfg_path)])
    assert code == 1
    assert not (tmp_path / "out").exists()


def test_unknown_scenario_rejected(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", scenario="submarine")
    assert main([str(cfg_path)]) == 1


def test_missing_config_file(tmp_path):
    assert main([str(tmp_path / "nope.ini")]) == 1


def test_unknown_solver_key_rejected(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini")
    text = cfg_path.read_text().replace("max_iterations = 4", "warp_speed = 9")
    cfg_path.write_text(text)
    assert main([str(cfg_path)]) == 1
    assert not (tmp_path / "out").exists()


def test_idempotent_reruns_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", methods="saa", alphas="0.3")
    assert main([str(cfg_path)]) == 0
    cell = tmp_path / "out" / "saa_alpha0.3"
    first = {name: (cell / name).read_bytes() for name in ARTIFACTS}
    first["summary"] = (tmp_path / "out" / "summary.csv").read_bytes()
    assert main([str(cfg_path)]) == 0
    for name in ARTIFACTS:
        assert (cell / name).read_bytes() == first[name], name
    assert (tmp_path / "out" / "summary.csv").read_bytes() == first["summary"]


def test_cli_overrides(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini")
    out2 = tmp_path / "elsewhere"
    assert main([str(cfg_path), "--output-dir", str(out2), "--seed", "3"]) == 0
    assert (out2 / "deterministic" / "report.json").exists()


def test_parallel_cells(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", methods="saa", alphas="0.2, 0.3", parallel="true")
    assert main([str(cfg_path)]) == 0
    rows = (tmp_path / "out" / "summary.csv").read_text().strip().splitlines()
    assert len(rows) == 3


def test_summary_recomputable_from_artifacts(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", methods="saa", alphas="0.25")
    assert main([str(cfg_path)]) == 0
    import csv

    with open(tmp_path / "out" / "summary.csv") as fh:
        row = list(csv.DictReader(fh))[0]
    with open(tmp_path / "out" / "saa_alpha0.25" / "validation.json") as fh:
        val = json.load(fh)
    with open(tmp_path / "out" / "saa_alpha0.25" / "report.json") as fh:
        rep = json.load(fh)
    assert float(row["violation_rate"]) == val["violation_rate"]
    assert float(row["empirical_avar"]) == val["empirical_avar"]
    assert float(row["mean_cost"]) == val["mean_cost"]
    assert float(row["objective"]) == rep["objective"]
    assert row["converged"] == str(rep["converged"])


def test_scenario_overrides_apply(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini")
    text = cfg_path.read_text() + "\n[scenario]\nnodes = 10\nhorizon = 1.5\n"
    cfg_path.write_text(text)
    assert main([str(cfg_path)]) == 0
    with open(tmp_path / "out" / "deterministic" / "report.json") as fh:
        rep = json.load(fh)
    assert len(rep["controls"]) == 10


def test_load_run_config_fields(tmp_path):
    cfg_path = write_config(tmp_path / "run.ini", methods="saa, gaussian_boole", alphas="0.1, 0.2")
    cfg = load_run_config(cfg_path)
    assert cfg.methods == ("saa", "gaussian_boole")
    assert cfg.alphas == (0.1, 0.2)
    assert cfg.n_val == 200
    assert cfg.solver_overrides == {"max_iterations": 4}
    with pytest.raises(ConfigurationError):
        RunConfig(scenario="drone", alphas=()).validate()
    assert cell_name("saa", 0.05) == "saa_alpha0.05"
    assert cell_name("deterministic", None) == "deterministic"
