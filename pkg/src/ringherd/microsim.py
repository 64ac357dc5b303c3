"""Agent-level simulation: follower SDE with pairwise kernel drift and
heterogeneous biases, leader integrators driven by the sampled control field,
closed through the density bridges.

Followers advance with Euler-Maruyama at dt_F; leaders take n_sub forward
Euler substeps of dt_L per control step, holding the spatial control profile
fixed and re-sampling it at their updated positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .density import estimate_density, lyapunov
from .follower_control import (
    FeasibilityError,
    feedforward_velocity,
    lifted_mass,
    timescale_check,
)
from .geometry import Field, circular_convolve, integrate, norm, sample_field, wrap
from .kernel import KernelParams, deconvolve, eval_kernel, kernel_field
from .leader_control import ReferenceRateEstimator
from .loop import ControlContext, SimulationDiverged, nan_guard
from .scenario import MetricsLog, Scenario

log = logging.getLogger(__name__)

# Above this pair count the quadratic drift sum is replaced by the grid path.
_EXACT_PAIR_LIMIT = 500 * 500


@dataclass
class Population:
    """Positions in (-pi, pi], per-agent mass, per-agent drift parameters."""

    positions: np.ndarray
    mass_per_agent: float
    biases: np.ndarray

    @property
    def count(self) -> int:
        return self.positions.size

    @property
    def total_mass(self) -> float:
        return self.count * self.mass_per_agent


@dataclass
class SimState:
    t: float
    followers: Population
    leaders: Population
    rng: np.random.Generator


def _draw_positions(rng: np.random.Generator, n: int, scenario: Scenario) -> np.ndarray:
    kind = scenario.initial_distribution
    if kind == "uniform":
        x = rng.uniform(-np.pi, np.pi, size=n)
    elif kind == "von_mises":
        kappa = scenario.init_kappa if scenario.init_kappa is not None else scenario.kappa
        mu = scenario.init_mu if scenario.init_mu is not None else scenario.mu
        x = rng.vonmises(mu, kappa, size=n)
    elif kind == "cluster":
        mu = scenario.init_mu if scenario.init_mu is not None else scenario.mu
        x = mu + rng.uniform(-0.05, 0.05, size=n)
    else:  # pragma: no cover - scenario validation rejects this
        raise ValueError(f"unknown initial distribution {kind!r}")
    return wrap(x)


def init_populations(scenario: Scenario, seed: int) -> SimState:
    """Draw initial positions and per-agent perturbation parameters.

    Reproducible: one generator seeds everything, draws ordered follower
    positions, follower biases, leader positions, leader biases.
    """
    rng = np.random.default_rng(seed)
    f_pos = _draw_positions(rng, scenario.n_followers, scenario)
    f_bias = rng.uniform(-scenario.B, scenario.B, size=scenario.n_followers)
    l_pos = _draw_positions(rng, scenario.n_leaders, scenario)
    l_bias = rng.uniform(-scenario.r, scenario.r, size=scenario.n_leaders)
    followers = Population(f_pos, scenario.mass_per_follower(), f_bias)
    leaders = Population(l_pos, scenario.mass_per_leader(), l_bias)
    return SimState(t=0.0, followers=followers, leaders=leaders, rng=rng)


def _linear_bin(positions: np.ndarray, mass_per_agent: float, grid) -> Field:
    """Mass histogram with linear (cloud-in-cell) weights, no filtering.

    Used only for the drift convolution: the interaction kernel does its own
    smoothing, and running the drift through the Gaussian-filtered estimate
    would add a systematic blur bias.
    """
    n = grid.n_points
    h = grid.spacing
    s = (wrap(positions) + np.pi) / h
    j = np.floor(s).astype(np.int64)
    t = s - j
    counts = (
        np.bincount(j % n, weights=1.0 - t, minlength=n)
        + np.bincount((j + 1) % n, weights=t, minlength=n)
    )
    return Field(grid, counts * (mass_per_agent / h))


def follower_drift(
    state: SimState,
    mode: str,
    p: KernelParams,
    rho_L: Field | None = None,
) -> np.ndarray:
    """Kernel-mediated leader influence evaluated at each follower.

    'exact': direct sum over all leaders, each weighted by its mass (the
    empirical-measure reading under which the sum converges to the mean-field
    convolution). 'grid': convolve a linearly-binned leader histogram with
    the kernel and interpolate; rho_L only supplies the grid.
    """
    xf = state.followers.positions
    if mode == "exact":
        xl = state.leaders.positions
        m = state.leaders.mass_per_agent
        out = np.zeros_like(xf)
        # chunk the pairwise difference matrix to bound memory
        chunk = max(1, int(4e6) // max(1, xl.size))
        for start in range(0, xf.size, chunk):
            block = xf[start : start + chunk, None] - xl[None, :]
            out[start : start + chunk] = m * eval_kernel(wrap(block), p).sum(axis=1)
        return out
    if mode == "grid":
        if rho_L is None:
            raise ValueError("grid mode needs the estimated leader density")
        hist = _linear_bin(
            state.leaders.positions, state.leaders.mass_per_agent, rho_L.grid
        )
        v = circular_convolve(kernel_field(rho_L.grid, p), hist)
        return sample_field(v, xf)
    raise ValueError(f"unknown drift mode {mode!r}")


def step_followers(state: SimState, drifts: np.ndarray, dt: float, D: float) -> None:
    """Euler-Maruyama step; noise drawn agent-ordered from the run generator."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = state.followers
    noise = state.rng.standard_normal(f.count)
    f.positions = wrap(
        f.positions + (f.biases + drifts) * dt + np.sqrt(2.0 * D * dt) * noise
    )


def step_leaders(state: SimState, u: Field, dt_L: float, n_sub: int, r: float) -> None:
    """n_sub forward-Euler substeps with the control profile held fixed and
    re-sampled at the updated positions; |per-agent perturbation| <= r."""
    if dt_L <= 0 or n_sub < 1:
        raise ValueError("dt_L must be positive and n_sub >= 1")
    lead = state.leaders
    grid = u.grid
    n = grid.n_points
    # Work in grid units s = (x + pi) / h: interpolation is two gathers and
    # the periodic wrap a single modulo. This loop dominates the run time.
    uv = np.concatenate((u.values, u.values[:1])) * (dt_L / grid.spacing)
    s = (lead.positions + np.pi) / grid.spacing
    s %= n
    bias_step = lead.biases * (dt_L / grid.spacing) if r > 0 else None
    for _ in range(n_sub):
        j = np.floor(s).astype(np.int64)
        t = s - j
        step = (1.0 - t) * uv[j] + t * uv[j + 1]
        if bias_step is not None:
            step = step + bias_step
        s += step
        s %= n
    lead.positions = wrap(s * grid.spacing - np.pi)


def run_micro(scenario: Scenario, seed: int | None = None) -> MetricsLog:
    """Closed-loop agent simulation; returns the metrics time series.

    Per control step: estimate both densities, synthesize the control field,
    advance leaders (substepped) and followers, log. Aborts with a snapshot
    if any field goes non-finite.
    """
    seed = scenario.seed if seed is None else seed
    grid = scenario.grid()
    target = scenario.target()
    smoother = scenario.smoother()
    kp = scenario.kernel_params()
    fgains = scenario.follower_gains()
    lgains = scenario.leader_gains()
    vff = feedforward_velocity(target, scenario.D)

    m_ff = lifted_mass(deconvolve(vff, kp))
    if scenario.M_L <= m_ff:
        raise FeasibilityError(
            f"leader mass {scenario.M_L} does not cover the feedforward mass {m_ff:.4g}"
        )
    ok, ratio = timescale_check(scenario.kp_l, scenario.kp_f, 1.0, scenario.D)
    if not ok:
        log.warning("timescale separation marginal: ratio %.2f < 10", ratio)

    estimator = ReferenceRateEstimator(grid, scenario.ema_smoothing, scenario.dt_F)
    ctx = ControlContext(
        target, vff, fgains, lgains, kp, scenario.M_L, estimator, smoother=smoother
    )
    state = init_populations(scenario, seed)
    drift_mode = scenario.resolved_drift_mode()
    n_steps = int(round(scenario.T_final / scenario.dt_F))
    metrics = MetricsLog()

    for step in range(n_steps + 1):
        rho_F = estimate_density(
            state.followers.positions, state.followers.mass_per_agent, grid, smoother
        )
        rho_L = estimate_density(
            state.leaders.positions, state.leaders.mass_per_agent, grid, smoother
        )
        try:
            out = ctx.synthesize(rho_F, rho_L)
        except (FloatingPointError, ValueError) as exc:
            raise SimulationDiverged(
                state.t,
                {
                    "rho_F": rho_F.values,
                    "rho_L": rho_L.values,
                    "followers": state.followers.positions,
                    "leaders": state.leaders.positions,
                },
            ) from exc
        d = out.diagnostics
        if step % scenario.log_every == 0 or step == n_steps:
            metrics.append(
                t=state.t,
                l2_err_F=norm(d.e_F, "l2"),
                l2_err_L=norm(d.e_L, "l2"),
                V_F=lyapunov(d.e_F),
                V_L=lyapunov(d.e_L),
                alpha=d.alpha,
                C=d.C,
                mass_F=integrate(rho_F),
                mass_L=integrate(rho_L),
                ks_bound_active=d.ks_bound_active,
                min_mass_estimate=d.min_mass_estimate,
                decay_bound_rhs=d.decay_bound_rhs,
                mass_drift_F=integrate(rho_F) - scenario.M_F,
                mass_drift_L=integrate(rho_L) - scenario.M_L,
            )
        if step == n_steps:
            metrics.final_fields = {
                "x": grid.nodes.copy(),
                "rho_F": rho_F.values.copy(),
                "rho_bar_F": target.field.values.copy(),
                "rho_L": rho_L.values.copy(),
                "rho_bar_L": out.rho_bar_L.values.copy(),
                "u": out.u.values.copy(),
            }
            break

        drifts = follower_drift(
            state, drift_mode, kp, rho_L=rho_L if drift_mode == "grid" else None
        )
        step_leaders(state, out.u, scenario.dt_L, scenario.n_sub, scenario.r)
        step_followers(state, drifts, scenario.dt_F, scenario.D)
        state.t = (step + 1) * scenario.dt_F
        nan_guard(
            {"followers": state.followers.positions, "leaders": state.leaders.positions},
            state.t,
        )
    return metrics
