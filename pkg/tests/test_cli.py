"""CLI subcommands, artifact schemas, exit codes, and sweep helpers."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ringherd.cli import (
    CONVERGENCE_THRESHOLD,
    main,
    min_mass_report,
    population_threshold,
    sweep_heterogeneity,
    sweep_population,
)
from ringherd.scenario import FIELDS_COLUMNS, SWEEP_COLUMNS, TIMESERIES_COLUMNS, Scenario

TINY = (
    "n_followers: 120\n"
    "n_leaders: 120\n"
    "T_final: 0.004\n"
    "seed: 5\n"
)


def write_cfg(tmp_path: Path, text: str, name: str = "cfg.yaml") -> str:
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_run_writes_artifacts(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    header, rows = read_csv(out / "timeseries.csv")
    assert tuple(header) == TIMESERIES_COLUMNS
    assert len(rows) == 21  # T/dt + 1
    t = [float(r[0]) for r in rows]
    assert all(b > a for a, b in zip(t, t[1:]))
    fh, frows = read_csv(out / "fields_final.csv")
    assert tuple(fh) == FIELDS_COLUMNS
    assert len(frows) == 150
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["scenario"]["n_followers"] == 120


def test_run_reproducible_byte_for_byte(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out-dir", str(out1), "--quiet"]) == 0
    assert main(["run", "--config", cfg, "--out-dir", str(out2), "--quiet"]) == 0
    assert (out1 / "timeseries.csv").read_bytes() == (out2 / "timeseries.csv").read_bytes()
    assert (out1 / "fields_final.csv").read_bytes() == (out2 / "fields_final.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", cfg, "--out-dir", str(out1), "--quiet"])
    main(["run", "--config", cfg, "--out-dir", str(out2), "--seed", "9", "--quiet"])
    assert (out1 / "timeseries.csv").read_bytes() != (out2 / "timeseries.csv").read_bytes()
    assert json.loads((out2 / "manifest.json").read_text())["seed"] == 9


def test_malformed_config_exits_2_no_artifacts(tmp_path):
    cfg = write_cfg(tmp_path, "n_followers: -5\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 2
    assert not out.exists()
    cfg2 = write_cfg(tmp_path, "unknown_knob: 1\n", "c2.yaml")
    assert main(["run", "--config", cfg2, "--out-dir", str(out), "--quiet"]) == 2
    assert not out.exists()


def test_run_macro_both_signs(tmp_path):
    cfg = write_cfg(tmp_path, "T_final: 0.002\nmacro_dt_max: 0.0005\n")
    out = tmp_path / "out"
    assert main(["run-macro", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    for name in ("timeseries_upper.csv", "timeseries_lower.csv",
                 "fields_final_upper.csv", "fields_final_lower.csv"):
        assert (out / name).exists()
    header, rows = read_csv(out / "timeseries_upper.csv")
    assert tuple(header) == TIMESERIES_COLUMNS
    assert len(rows) >= 3


def test_run_macro_single_sign(tmp_path):
    cfg = write_cfg(tmp_path, "T_final: 0.002\nbounding: lower\nmode: macro\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    assert (out / "timeseries.csv").exists()


def test_min_mass_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["min-mass", "--config", cfg, "--out-dir", str(out)]) == 0
    report = json.loads((out / "min_mass.json").read_text())
    assert {"min_mass_estimate", "M_L", "feasible"} <= set(report)
    assert "minimum leader mass estimate" in capsys.readouterr().out


def test_sweep_het_artifacts(tmp_path):
    cfg = write_cfg(
        tmp_path,
        TINY + "sweep_het:\n  B_values: [1, 2]\n  seeds: [0, 1]\n",
    )
    out = tmp_path / "out"
    assert main(["sweep-het", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    header, rows = read_csv(out / "sweep.csv")
    assert tuple(header) == SWEEP_COLUMNS
    # one row per (B, seed) plus median and max aggregate rows per B
    assert len(rows) == 2 * 2 + 2 * 2
    seeds = {r[1] for r in rows}
    assert {"median", "max"} <= seeds


def test_sweep_pop_artifacts(tmp_path):
    cfg = write_cfg(
        tmp_path,
        TINY + "sweep_pop:\n  axis: followers\n  N_values: [40, 80]\n  seeds: [0]\n",
    )
    out = tmp_path / "out"
    assert main(["sweep-pop", "--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    header, rows = read_csv(out / "sweep.csv")
    assert tuple(header) == SWEEP_COLUMNS
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["sweep_pop"]["axis"] == "followers"


def test_sweep_functions_direct():
    base = Scenario(n_followers=80, n_leaders=80, T_final=0.004)
    rows = sweep_heterogeneity(base, [1.0], [0, 1], workers=1)
    per_seed = [r for r in rows if isinstance(r["seed"], int)]
    assert len(per_seed) == 2
    aggs = [r for r in rows if r["seed"] == "median"]
    assert len(aggs) == 1
    assert aggs[0]["terminal_l2_err_F"] == pytest.approx(
        float(np.median([r["terminal_l2_err_F"] for r in per_seed]))
    )
    rows_pop = sweep_population(base, "leaders", [20, 40], [0], workers=2)
    assert {r["axis_value"] for r in rows_pop} == {20.0, 40.0}


def test_population_threshold_logic():
    rows = [
        {"axis_value": 10.0, "seed": "median", "terminal_l2_err_F": 0.5},
        {"axis_value": 100.0, "seed": "median", "terminal_l2_err_F": 0.02},
        {"axis_value": 1000.0, "seed": "median", "terminal_l2_err_F": 0.005},
        {"axis_value": 1000.0, "seed": 0, "terminal_l2_err_F": 0.004},
    ]
    assert population_threshold(rows) == 1000.0
    assert CONVERGENCE_THRESHOLD == 1e-2
    assert population_threshold([r for r in rows if r["axis_value"] < 1000]) is None
