"""Experiment driver: single runs, the heterogeneity and population-size
sweeps, and the minimum-leader-mass report.

Artifacts per run: timeseries.csv, fields_final.csv, and manifest.json (the
resolved scenario, seed, and package version, so every artifact is
reproducible from its manifest). Exit codes: 0 success, 2 invalid config,
3 simulation diverged (a snapshot is written for post-mortem).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .follower_control import FeasibilityError
from .loop import SimulationDiverged
from .macrosim import run_macro
from .microsim import run_micro
from .scenario import (
    FIELDS_COLUMNS,
    SWEEP_COLUMNS,
    TIMESERIES_COLUMNS,
    ConfigError,
    MetricsLog,
    Scenario,
    load_scenario,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

# Error norm below which a sweep cell counts as converged.
CONVERGENCE_THRESHOLD = 1e-2


def _write_timeseries(path: Path, metrics: MetricsLog) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)
        writer.writerows(metrics.as_rows())


def _write_fields(path: Path, metrics: MetricsLog) -> None:
    cols = [metrics.final_fields[name] for name in FIELDS_COLUMNS]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS_COLUMNS)
        writer.writerows(zip(*[np.asarray(c) for c in cols]))


def _write_manifest(path: Path, scenario: Scenario, seed: int, extra: dict[str, Any] | None = None) -> None:
    payload = {
        "version": __version__,
        "seed": seed,
        "scenario": scenario.to_dict(),
        "resolved_ks_f": scenario.resolved_ks_f(),
    }
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_snapshot(out_dir: Path, exc: SimulationDiverged) -> Path:
    path = out_dir / "snapshot.json"
    payload = {"t": exc.t, "fields": {k: np.asarray(v).tolist() for k, v in exc.snapshot.items()}}
    path.write_text(json.dumps(payload) + "\n")
    return path


def _single_run(scenario: Scenario, seed: int) -> MetricsLog:
    if scenario.mode == "macro":
        bounding = scenario.bounding if scenario.bounding != "both" else "upper"
        return run_macro(scenario, bounding)
    return run_micro(scenario, seed)


def cmd_run(scenario: Scenario, out_dir: Path, seed: int, quiet: bool) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if scenario.mode == "macro" and scenario.bounding == "both":
            results = {b: run_macro(scenario, b) for b in ("upper", "lower")}
            for name, metrics in results.items():
                _write_timeseries(out_dir / f"timeseries_{name}.csv", metrics)
                _write_fields(out_dir / f"fields_final_{name}.csv", metrics)
        else:
            metrics = _single_run(scenario, seed)
            _write_timeseries(out_dir / "timeseries.csv", metrics)
            _write_fields(out_dir / "fields_final.csv", metrics)
            if not quiet:
                print(
                    f"run finished: ||e_F(T)||_2 = {metrics.l2_err_F[-1]:.4e} "
                    f"(initial {metrics.l2_err_F[0]:.4e})"
                )
    except SimulationDiverged as exc:
        snap = _write_snapshot(out_dir, exc)
        print(f"simulation diverged at t={exc.t:.6g}; snapshot: {snap}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_manifest(out_dir / "manifest.json", scenario, seed)
    return EXIT_OK


def _sweep_cell(args: tuple[Scenario, float, int]) -> dict[str, Any]:
    """One sweep cell; runs in a worker process, fully independent."""
    scenario, axis_value, seed = args
    try:
        metrics = run_micro(scenario, seed)
        min_mass = min_mass_supremum(metrics, scenario.dt_F)
        return {
            "axis_value": axis_value,
            "seed": seed,
            "terminal_l2_err_F": metrics.terminal_error(),
            "min_mass_estimate": min_mass,
            "feasible": min_mass <= scenario.M_L,
            "error": "",
        }
    except (SimulationDiverged, FeasibilityError) as exc:
        return {
            "axis_value": axis_value,
            "seed": seed,
            "terminal_l2_err_F": float("nan"),
            "min_mass_estimate": float("nan"),
            "feasible": False,
            "error": f"{type(exc).__name__}: {exc}",
        }


def _run_cells(
    cells: Sequence[tuple[Scenario, float, int]], workers: int
) -> list[dict[str, Any]]:
    if workers <= 1 or len(cells) <= 1:
        return [_sweep_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_cell, cells))


def _aggregate_rows(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Median and max rows per axis value, appended after the per-seed rows."""
    out: list[dict[str, Any]] = []
    values = sorted({row["axis_value"] for row in rows})
    for value in values:
        group = [r for r in rows if r["axis_value"] == value and r["error"] == ""]
        if not group:
            continue
        errs = [r["terminal_l2_err_F"] for r in group]
        masses = [r["min_mass_estimate"] for r in group]
        for label, err, mass in (
            ("median", float(np.median(errs)), float(np.median(masses))),
            ("max", float(np.max(errs)), float(np.max(masses))),
        ):
            out.append(
                {
                    "axis_value": value,
                    "seed": label,
                    "terminal_l2_err_F": err,
                    "min_mass_estimate": mass,
                    "feasible": all(r["feasible"] for r in group),
                    "error": "",
                }
            )
    return out


def _write_sweep(path: Path, rows: list[dict[str, Any]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row[col] for col in SWEEP_COLUMNS])


def sweep_heterogeneity(
    base: Scenario, B_values: Sequence[float], seeds: Sequence[int], workers: int = 1
) -> list[dict[str, Any]]:
    """Per B: assume the drawn bound (k = B), retune the switching gain by the
    margin rule, run every seed."""
    cells = []
    for B in B_values:
        scenario = base.replace(B=float(B), k=float(B), ks_f=None)
        for seed in seeds:
            cells.append((scenario, float(B), int(seed)))
    rows = _run_cells(cells, workers)
    return rows + _aggregate_rows(rows)


def sweep_population(
    base: Scenario,
    axis: str,
    N_values: Sequence[int],
    seeds: Sequence[int],
    workers: int = 1,
) -> list[dict[str, Any]]:
    """Vary one population's headcount, holding total masses fixed."""
    if axis not in ("leaders", "followers"):
        raise ConfigError("sweep axis must be 'leaders' or 'followers'")
    cells = []
    for n in N_values:
        if axis == "leaders":
            scenario = base.replace(n_leaders=int(n))
        else:
            scenario = base.replace(n_followers=int(n))
        for seed in seeds:
            cells.append((scenario, float(n), int(seed)))
    rows = _run_cells(cells, workers)
    return rows + _aggregate_rows(rows)


def population_threshold(rows: list[dict[str, Any]]) -> float | None:
    """Smallest axis value whose median terminal error is below threshold."""
    medians = [(r["axis_value"], r["terminal_l2_err_F"]) for r in rows if r["seed"] == "median"]
    for value, err in sorted(medians):
        if err < CONVERGENCE_THRESHOLD:
            return value
    return None


MIN_MASS_AVG_WINDOW = 0.02  # time units; suppresses estimation shot noise


def min_mass_supremum(metrics: MetricsLog, dt: float) -> float:
    """Supremum of the minimum-leader-mass bound along a trajectory, taken on
    a rolling time average: the bound varies slowly, while the pointwise
    maximum of a noisy series grows with trajectory length."""
    series = np.asarray(metrics.min_mass_estimate)
    window = max(1, int(round(MIN_MASS_AVG_WINDOW / dt)))
    if series.size > window:
        series = np.convolve(series, np.ones(window) / window, mode="valid")
    return float(series.max())


def min_mass_report(scenario: Scenario, seed: int) -> dict[str, Any]:
    """Run the nominal trajectory and report the supremum of the
    minimum-leader-mass bound along it."""
    metrics = run_micro(scenario, seed)
    estimate = min_mass_supremum(metrics, scenario.dt_F)
    return {
        "min_mass_estimate": estimate,
        "M_L": scenario.M_L,
        "feasible": estimate <= scenario.M_L,
        "terminal_l2_err_F": metrics.terminal_error(),
    }


def _parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="ringherd",
        description="Leader-follower density control experiments on the ring",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "single closed-loop run (micro or macro per config)"),
        ("run-macro", "PDE run of the bounding systems"),
        ("sweep-het", "heterogeneity sweep over the bias bound B"),
        ("sweep-pop", "population-size sweep over one axis"),
        ("min-mass", "minimum leader mass report for the configured scenario"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML scenario file")
        p.add_argument("--out-dir", default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override scenario seed")
        p.add_argument("--quiet", action="store_true")
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING)
    try:
        scenario, extras = load_scenario(args.config)
        if args.seed is not None:
            scenario = scenario.replace(seed=args.seed)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out_dir)
    seed = scenario.seed

    if args.command == "run":
        return cmd_run(scenario, out_dir, seed, args.quiet)

    if args.command == "run-macro":
        return cmd_run(scenario.replace(mode="macro"), out_dir, seed, args.quiet)

    sweep_cfg = extras.get("sweep", {}) or {}
    workers = int(sweep_cfg.get("workers", 1))

    if args.command == "sweep-het":
        cfg = extras.get("sweep_het") or {}
        B_values = cfg.get("B_values", [2, 6, 10, 14, 20])
        seeds = cfg.get("seeds", [seed])
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = sweep_heterogeneity(scenario, B_values, seeds, workers)
        _write_sweep(out_dir / "sweep.csv", rows)
        _write_manifest(out_dir / "manifest.json", scenario, seed,
                        {"sweep_het": {"B_values": list(B_values), "seeds": list(seeds)}})
        if not args.quiet:
            for row in rows:
                if row["seed"] == "median":
                    print(
                        f"B={row['axis_value']:g}: median err {row['terminal_l2_err_F']:.3e} "
                        f"min-mass {row['min_mass_estimate']:.1f} feasible={row['feasible']}"
                    )
        return EXIT_OK

    if args.command == "sweep-pop":
        cfg = extras.get("sweep_pop") or {}
        axis = cfg.get("axis", "leaders")
        N_values = cfg.get("N_values", np.unique(
            np.round(np.logspace(np.log10(10), np.log10(2000), 10)).astype(int)
        ).tolist())
        seeds = cfg.get("seeds", [seed])
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            rows = sweep_population(scenario, axis, N_values, seeds, workers)
        except ConfigError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        _write_sweep(out_dir / "sweep.csv", rows)
        threshold = population_threshold(rows)
        _write_manifest(
            out_dir / "manifest.json", scenario, seed,
            {"sweep_pop": {"axis": axis, "N_values": list(N_values),
                           "seeds": list(seeds), "threshold": threshold}},
        )
        if not args.quiet:
            print(f"{axis} threshold (median err < {CONVERGENCE_THRESHOLD:g}): {threshold}")
        return EXIT_OK

    if args.command == "min-mass":
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            report = min_mass_report(scenario, seed)
        except SimulationDiverged as exc:
            snap = _write_snapshot(out_dir, exc)
            print(f"simulation diverged; snapshot: {snap}", file=sys.stderr)
            return EXIT_DIVERGED
        (out_dir / "min_mass.json").write_text(json.dumps(report, indent=2) + "\n")
        _write_manifest(out_dir / "manifest.json", scenario, seed)
        print(
            f"minimum leader mass estimate: {report['min_mass_estimate']:.2f} "
            f"(available M_L = {report['M_L']:g}) -> "
            f"{'feasible' if report['feasible'] else 'infeasible'}"
        )
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
