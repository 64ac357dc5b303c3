"""Figure rendering from ringherd CSV artifacts.

Four figure kinds, all driven purely by the CSV bytes: error-norm time
series, final density profiles with target overlays, the heterogeneity sweep
with infeasibility shading, and the population-threshold curves. Rendering
is deterministic: fixed fonts, sizes, colors, and rasterizer settings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("timeseries", "carpet", "sweep_het", "sweep_pop")
FORMATS = ("svg", "png")

# Terminal error below which a sweep cell counts as converged (the primary's
# convergence threshold; used for the population threshold marker).
CONVERGENCE_THRESHOLD = 1e-2

SCHEMAS = {
    "timeseries": ["t", "l2_err_F", "l2_err_L", "V_F", "V_L", "alpha", "C",
                   "mass_F", "mass_L"],
    "carpet": ["x", "rho_F", "rho_bar_F", "rho_L", "rho_bar_L", "u"],
    "sweep_het": ["axis_value", "seed", "terminal_l2_err_F",
                  "min_mass_estimate", "feasible"],
    "sweep_pop": ["axis_value", "seed", "terminal_l2_err_F",
                  "min_mass_estimate", "feasible"],
}

_RC = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "ringherd",
}

COLORS = {
    "error": "#1f77b4",
    "leader": "#ff7f0e",
    "target": "#444444",
    "estimate": "#1f77b4",
    "control": "#2ca02c",
    "infeasible": "#d62728",
    "threshold": "#555555",
}


class SchemaError(ValueError):
    """CSV header does not match the expected schema for the figure kind."""


@dataclass(frozen=True)
class FigureSpec:
    """What to render: input CSVs, figure kind, output path, image format."""

    inputs: Sequence[str]
    kind: str
    output: str
    image_format: str = "png"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.image_format not in FORMATS:
            raise ValueError(f"image format must be one of {FORMATS}")
        if not self.inputs:
            raise ValueError("at least one input CSV required")


def _read_table(path: str, kind: str) -> dict[str, list[str]]:
    expected = SCHEMAS[kind]
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"{path}: file does not exist")
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file (no header)")
    header = rows[0]
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SchemaError(
            f"{path}: header mismatch for kind {kind!r}: "
            f"missing {missing}, unexpected {extra}"
        )
    if len(rows) < 2:
        raise SchemaError(f"{path}: no data rows")
    cols: dict[str, list[str]] = {name: [] for name in header}
    for row in rows[1:]:
        for name, value in zip(header, row):
            cols[name].append(value)
    return cols


def _floats(col: list[str]) -> np.ndarray:
    return np.asarray([float(v) for v in col])


def _render_timeseries(cols: dict[str, list[str]], ax) -> dict[str, Any]:
    t = _floats(cols["t"])
    e_f = _floats(cols["l2_err_F"])
    e_l = _floats(cols["l2_err_L"])
    ax.plot(t, e_f, color=COLORS["error"], label="follower error")
    ax.plot(t, e_l, color=COLORS["leader"], alpha=0.7, label="leader error")
    ax.set_yscale("log")
    ax.set_xlabel("time")
    ax.set_ylabel("L2 error norm")
    ax.legend(loc="upper right")
    return {"final_error": float(e_f[-1]), "initial_error": float(e_f[0])}


def _render_carpet(cols: dict[str, list[str]], fig) -> dict[str, Any]:
    x = _floats(cols["x"])
    fig.clf()
    fig.set_size_inches(7.0, 7.0)
    axes = fig.subplots(3, 1, sharex=True)
    axes[0].plot(x, _floats(cols["rho_bar_F"]), "--", color=COLORS["target"],
                 label="target")
    axes[0].plot(x, _floats(cols["rho_F"]), color=COLORS["estimate"],
                 label="followers")
    axes[0].set_ylabel("follower density")
    axes[0].legend(loc="upper right")
    axes[1].plot(x, _floats(cols["rho_bar_L"]), "--", color=COLORS["target"],
                 label="reference")
    axes[1].plot(x, _floats(cols["rho_L"]), color=COLORS["leader"],
                 label="leaders")
    axes[1].set_ylabel("leader density")
    axes[1].legend(loc="upper right")
    axes[2].plot(x, _floats(cols["u"]), color=COLORS["control"])
    axes[2].set_ylabel("control field u")
    axes[2].set_xlabel("x")
    return {"nodes": len(x)}


def _median_rows(cols: dict[str, list[str]]) -> list[tuple[float, float, bool]]:
    out = []
    for value, seed, err, feas in zip(
        cols["axis_value"], cols["seed"], cols["terminal_l2_err_F"], cols["feasible"]
    ):
        if seed == "median":
            out.append((float(value), float(err), feas.strip() == "True"))
    out.sort()
    return out


def _render_sweep_het(cols: dict[str, list[str]], ax) -> dict[str, Any]:
    rows = _median_rows(cols)
    if not rows:
        raise SchemaError("sweep CSV has no aggregate (median) rows")
    values = [v for v, _, _ in rows]
    errs = [e for _, e, _ in rows]
    shaded = [v for v, _, feas in rows if not feas]
    ax.plot(values, errs, "o-", color=COLORS["error"])
    if shaded:
        lo = min(shaded)
        hi = max(max(shaded), max(values))
        step = values[1] - values[0] if len(values) > 1 else 1.0
        ax.axvspan(lo - 0.5 * step, hi + 0.5 * step, color=COLORS["infeasible"],
                   alpha=0.15, label="mass bound violated")
        ax.legend(loc="upper left")
    ax.set_yscale("log")
    ax.set_xlabel("heterogeneity bound B")
    ax.set_ylabel("terminal L2 error (median)")
    return {"shaded_values": shaded}


def _render_sweep_pop(cols: dict[str, list[str]], ax) -> dict[str, Any]:
    rows = _median_rows(cols)
    if not rows:
        raise SchemaError("sweep CSV has no aggregate (median) rows")
    values = [v for v, _, _ in rows]
    errs = [e for _, e, _ in rows]
    threshold = next(
        (v for v, e, _ in rows if e < CONVERGENCE_THRESHOLD), None
    )
    ax.plot(values, errs, "o-", color=COLORS["error"])
    ax.axhline(CONVERGENCE_THRESHOLD, color=COLORS["threshold"], lw=0.8,
               linestyle=":")
    if threshold is not None:
        ax.axvline(threshold, color=COLORS["threshold"], linestyle="--",
                   label=f"threshold N = {threshold:g}")
        ax.legend(loc="upper right")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("population size N")
    ax.set_ylabel("terminal L2 error (median)")
    return {"threshold": threshold}


def render(spec: FigureSpec) -> dict[str, Any]:
    """Render the figure described by spec; returns render metadata.

    The output file is written only after every input passed schema
    validation; on error nothing is written.
    """
    tables = [_read_table(path, spec.kind) for path in spec.inputs]
    with plt.rc_context(_RC):
        fig = plt.figure()
        try:
            if spec.kind == "carpet":
                meta = _render_carpet(tables[0], fig)
            else:
                ax = fig.add_subplot(111)
                if spec.kind == "timeseries":
                    meta = _render_timeseries(tables[0], ax)
                elif spec.kind == "sweep_het":
                    meta = _render_sweep_het(tables[0], ax)
                else:
                    meta = _render_sweep_pop(tables[0], ax)
            out = Path(spec.output)
            out.parent.mkdir(parents=True, exist_ok=True)
            savekw: dict[str, Any] = {"format": spec.image_format}
            if spec.image_format == "svg":
                savekw["metadata"] = {"Date": None}
            fig.savefig(out, **savekw)
        finally:
            plt.close(fig)
    meta["output"] = str(spec.output)
    return meta
