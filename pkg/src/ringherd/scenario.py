"""Experiment description, validation, and the metrics time series.

A Scenario fully determines a run (populations, target, gains, integrator
steps, seed); configs are YAML files mirroring its fields, with unknown keys
rejected so typos fail loudly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Any

import numpy as np
import yaml

from .density import Smoother, TargetDensity, von_mises_target
from .follower_control import FollowerGains, ks_f_with_margin
from .geometry import Grid
from .kernel import KernelParams
from .leader_control import LeaderGains

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

INITIAL_DISTRIBUTIONS = ("uniform", "von_mises", "cluster")
DRIFT_MODES = ("auto", "exact", "grid")
MODES = ("micro", "macro")
BOUNDINGS = ("upper", "lower", "both")

# Exact column order of the run time series artifact.
TIMESERIES_COLUMNS = (
    "t",
    "l2_err_F",
    "l2_err_L",
    "V_F",
    "V_L",
    "alpha",
    "C",
    "mass_F",
    "mass_L",
)

SWEEP_COLUMNS = ("axis_value", "seed", "terminal_l2_err_F", "min_mass_estimate", "feasible")

FIELDS_COLUMNS = ("x", "rho_F", "rho_bar_F", "rho_L", "rho_bar_L", "u")


class ConfigError(ValueError):
    """Invalid or malformed scenario configuration."""


@dataclass
class Scenario:
    """Complete experiment description with paper-nominal defaults."""

    n_followers: int = 1000
    n_leaders: int = 1000
    M_F: float = 1.0
    M_L: float = 30.0
    D: float = 0.1
    ell: float = float(np.pi)
    kappa: float = 1.0
    mu: float = 0.0
    B: float = 2.0
    k: float = 1.0
    r: float = 0.0
    kp_f: float = 2.0
    ks_f: float | None = None  # None -> factor-rule from (D, k) margins
    ks_f_factor: float = 5.0
    kp_l: float = 50.0
    ks_l: float = 0.1
    eta: float = 100.0
    n_points: int = 150
    sigma: float = float(np.pi / 30.0)
    dt_F: float = 2e-4
    dt_L: float = 2e-6
    n_sub: int = 100
    T_final: float = 1.0
    seed: int = 0
    initial_distribution: str = "uniform"
    init_kappa: float | None = None
    init_mu: float | None = None
    drift_mode: str = "auto"
    mode: str = "micro"
    bounding: str = "both"
    macro_dt_max: float = 1e-3
    ema_smoothing: float = 0.1
    log_every: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        positive = {
            "n_followers": self.n_followers,
            "n_leaders": self.n_leaders,
            "M_F": self.M_F,
            "M_L": self.M_L,
            "D": self.D,
            "ell": self.ell,
            "kp_f": self.kp_f,
            "kp_l": self.kp_l,
            "eta": self.eta,
            "sigma": self.sigma,
            "dt_F": self.dt_F,
            "dt_L": self.dt_L,
            "n_sub": self.n_sub,
            "T_final": self.T_final,
            "macro_dt_max": self.macro_dt_max,
            "log_every": self.log_every,
            "ks_f_factor": self.ks_f_factor,
        }
        for name, value in positive.items():
            if not (value > 0):
                raise ConfigError(f"{name} must be positive, got {value}")
        for name, value in (("B", self.B), ("k", self.k), ("r", self.r), ("ks_l", self.ks_l)):
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if self.ks_f is not None and self.ks_f < 0:
            raise ConfigError("ks_f must be non-negative")
        if self.n_points < 4 or self.n_points % 2:
            raise ConfigError("n_points must be an even integer >= 4")
        if self.initial_distribution not in INITIAL_DISTRIBUTIONS:
            raise ConfigError(f"initial_distribution must be one of {INITIAL_DISTRIBUTIONS}")
        if self.drift_mode not in DRIFT_MODES:
            raise ConfigError(f"drift_mode must be one of {DRIFT_MODES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.bounding not in BOUNDINGS:
            raise ConfigError(f"bounding must be one of {BOUNDINGS}")
        if not (0.0 < self.ema_smoothing <= 1.0):
            raise ConfigError("ema_smoothing must lie in (0, 1]")
        if self.k < self.B:
            log.warning(
                "assumed perturbation bound k=%.3g below heterogeneity B=%.3g; "
                "the robustness guarantee does not cover all drawn biases",
                self.k,
                self.B,
            )

    # -- derived objects ---------------------------------------------------

    def grid(self) -> Grid:
        return Grid(self.n_points)

    def target(self) -> TargetDensity:
        return von_mises_target(self.grid(), self.kappa, self.mu, self.M_F)

    def smoother(self) -> Smoother:
        return Smoother(self.sigma)

    def kernel_params(self) -> KernelParams:
        return KernelParams(self.ell)

    def resolved_ks_f(self) -> float:
        if self.ks_f is not None:
            return self.ks_f
        return ks_f_with_margin(self.target(), self.D, self.k, self.ks_f_factor)

    def follower_gains(self) -> FollowerGains:
        return FollowerGains(
            kp_f=self.kp_f,
            ks_f=self.resolved_ks_f(),
            eta=self.eta,
            k=self.k,
            D=self.D,
            rho_floor=1e-6 * self.M_F / TWO_PI,
        )

    def leader_gains(self) -> LeaderGains:
        # The leader floor matches the reference positivity floor: the clamp
        # never binds once tracking converges, but bounds u (and the PDE's
        # CFL step) when the leader density transiently dips below it.
        return LeaderGains(
            kp_l=self.kp_l,
            ks_l=self.ks_l,
            r=self.r,
            eta=self.eta,
            rho_floor=1e-2 * self.M_L / TWO_PI,
        )

    def mass_per_follower(self) -> float:
        return self.M_F / self.n_followers

    def mass_per_leader(self) -> float:
        return self.M_L / self.n_leaders

    def resolved_drift_mode(self) -> str:
        if self.drift_mode != "auto":
            return self.drift_mode
        return "exact" if self.n_followers * self.n_leaders <= 500 * 500 else "grid"

    def replace(self, **kwargs: Any) -> "Scenario":
        data = self.to_dict()
        data.update(kwargs)
        return Scenario(**data)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    """Build a Scenario from a (possibly nested) mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    flat: dict[str, Any] = {}
    nested_sections = {"follower_gains": {"kp_f", "ks_f", "ks_f_factor"},
                       "leader_gains": {"kp_l", "ks_l"}}
    known = {f.name for f in dataclass_fields(Scenario)}
    for key, value in data.items():
        if key in nested_sections:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            for sub, subval in value.items():
                if sub not in nested_sections[key]:
                    raise ConfigError(f"unknown key {key}.{sub!r}")
                flat[sub] = subval
        elif key in known:
            flat[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return Scenario(**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path: str) -> tuple[Scenario, dict[str, Any]]:
    """Parse a YAML config file; returns the scenario and any sweep sections."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    extras: dict[str, Any] = {}
    scenario_data: dict[str, Any] = {}
    for key, value in raw.items():
        if key in ("sweep_het", "sweep_pop", "sweep"):
            extras[key] = value
        else:
            scenario_data[key] = value
    return scenario_from_dict(scenario_data), extras


@dataclass
class MetricsLog:
    """Per-step time series of the closed loop's health indicators."""

    t: list[float] = field(default_factory=list)
    l2_err_F: list[float] = field(default_factory=list)
    l2_err_L: list[float] = field(default_factory=list)
    V_F: list[float] = field(default_factory=list)
    V_L: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    C: list[float] = field(default_factory=list)
    mass_F: list[float] = field(default_factory=list)
    mass_L: list[float] = field(default_factory=list)
    ks_bound_active: list[bool] = field(default_factory=list)
    min_mass_estimate: list[float] = field(default_factory=list)
    # extra diagnostics (not part of the CSV schema)
    decay_bound_rhs: list[float] = field(default_factory=list)
    mass_drift_F: list[float] = field(default_factory=list)
    mass_drift_L: list[float] = field(default_factory=list)
    final_fields: dict[str, np.ndarray] = field(default_factory=dict)

    def append(self, **kwargs: Any) -> None:
        for key, value in kwargs.items():
            getattr(self, key).append(value)

    def as_rows(self) -> list[list[float]]:
        return [
            [getattr(self, col)[i] for col in TIMESERIES_COLUMNS]
            for i in range(len(self.t))
        ]

    def terminal_error(self, tail_fraction: float = 0.1) -> float:
        """Robust terminal value: median of the error norm over the last
        fraction of the run."""
        n = len(self.l2_err_F)
        if n == 0:
            raise ValueError("empty metrics log")
        tail = max(1, int(round(tail_fraction * n)))
        return float(np.median(self.l2_err_F[-tail:]))
