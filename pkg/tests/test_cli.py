import csv
import json

import pytest

from hkflow import cli
from hkflow.config import ConfigError, validate


def run_cli(tmp_path, command, doc, *extra):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), "--quiet", *extra])
    return code, out


def test_equilibrium_writes_full_precision_csv(tmp_path):
    code, out = run_cli(tmp_path, "equilibrium",
                        {"model": {"name": "log_potential", "parameters": {"V": "cos(2*pi*x)"}},
                         "domain": {"n_cells": 16}})
    assert code == cli.EXIT_OK
    with open(out / "equilibrium.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "m", "f_at_m"] and len(rows) == 17
    assert all(cell == "%.17g" % float(cell) for row in rows[1:] for cell in row)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mass"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("doc", [
    {"unknown": 1},
    {"model": {"name": "power_law", "parameters": {"alpha": 0}}},
    {"model": {"name": "power_law", "parameters": {"V": "x"}}},
    {"domain": {"n_cells": 1}},
    {"initial": {"expression": "log(x)"}},
    {"flow": {"cfl_safety": 2}},
])
def test_bad_configs_exit_2(tmp_path, doc):
    code, _ = run_cli(tmp_path, "equilibrium", doc)
    assert code == cli.EXIT_CONFIG
    with pytest.raises(ConfigError):
        validate(doc)


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["equilibrium", "--config", str(tmp_path / "none.json"), "--quiet"]) == cli.EXIT_CONFIG


def test_simulate_with_mass_recovery(tmp_path):
    code, out = run_cli(tmp_path, "simulate",
                        {"domain": {"n_cells": 32},
                         "flow": {"t_end": 0.1, "snapshot_every": 0.05, "mass_recovery": True, "M0": 2.0}})
    assert code == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_mass_drift"] < 1e-12 and summary["entropy_increases"] == 0
    assert summary["max_principle"]["passed"]
    assert len(list((out / "snapshots").glob("*.csv"))) == 3
    assert (out / "mass.csv").read_text().startswith("t,M\n")


def test_simulate_fitness_recovery_report(tmp_path):
    code, out = run_cli(tmp_path, "simulate",
                        {"domain": {"n_cells": 32},
                         "flow": {"kind": "fitness", "t_end": 0.1, "mass_recovery": True, "M0": 2.0}})
    assert code == cli.EXIT_OK
    rec = json.loads((out / "summary.json").read_text())["mass_recovery"]
    assert rec["relative_l1_final"] < 0.02


def test_simulate_rejects_non_unit_spherical_mass(tmp_path):
    code, _ = run_cli(tmp_path, "simulate", {"initial": {"expression": "2"}})
    assert code == cli.EXIT_CONFIG


def test_distance_mass_mismatch_and_nonconvergence(tmp_path):
    ends = {"rho0": {"expression": "1"}, "rho1": {"expression": "2"}}
    code, _ = run_cli(tmp_path, "distance", {"domain": {"n_cells": 16}, "endpoints": ends})
    assert code == cli.EXIT_CONFIG
    doc = {"domain": {"n_cells": 16},
           "endpoints": {"rho0": {"expression": "1 + 0.9*cos(2*pi*x)", "normalize": 1},
                         "rho1": {"expression": "1 - 0.9*cos(2*pi*x)", "normalize": 1}},
           "transport": {"kinds": ["W2"], "max_iters": 10, "n_time": 8}}
    code, out = run_cli(tmp_path, "distance", doc)
    assert code == cli.EXIT_TRANSPORT
    summary = json.loads((out / "summary.json").read_text())
    assert summary["distances"]["W2"]["converged"] is False


def test_distance_reports_ordering(tmp_path):
    doc = {"domain": {"n_cells": 16},
           "endpoints": {"rho0": {"expression": "1 + 0.5*cos(2*pi*x)", "normalize": 1},
                         "rho1": "equilibrium"},
           "model": {"name": "log_potential", "parameters": {"V": "sin(2*pi*x)"}},
           "transport": {"n_time": 8, "dump_interpolation": True}}
    code, out = run_cli(tmp_path, "distance", doc)
    assert code == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["ordering"]["passed"]
    assert (out / "interpolation_HK.csv").exists()


def test_verify_is_deterministic_across_jobs(tmp_path):
    doc = {"verify": {"suite": "logsobolev"}}
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    code1, out1 = run_cli(tmp_path / "a", "verify", doc)
    code2, out2 = run_cli(tmp_path / "b", "verify", doc, "--jobs", "2")
    assert code1 == code2 == cli.EXIT_OK
    files = sorted(p.name for p in out1.iterdir())
    assert files == sorted(p.name for p in out2.iterdir())
    for name in files:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
