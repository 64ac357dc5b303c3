"""Per-step control synthesis shared by the agent and PDE simulations.

Given the follower/leader densities (estimated or exact), produce the
macroscopic control field u and the diagnostics logged every step. The PDE
path feeds exact densities and bypasses smoothing; the agent path feeds
estimates and smooths the assembled reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import Smoother, TargetDensity, error_field, lyapunov
from .follower_control import (
    FollowerGains,
    assemble_reference_from_components,
    g1_inf_norm,
    invert_flux,
    lifted_mass,
    qf_field,
    switching_mass,
)
from .geometry import Field, derivative, integrate, norm, second_derivative
from .kernel import KernelParams, deconvolve, kernel_field
from .leader_control import (
    LeaderGains,
    ReferenceRateEstimator,
    leader_velocity,
    ql_field,
)


class SimulationDiverged(RuntimeError):
    """A field went NaN/inf; carries a snapshot for post-mortem."""

    def __init__(self, t: float, snapshot: dict[str, np.ndarray]) -> None:
        super().__init__(f"simulation diverged at t={t:.6g}: {sorted(snapshot)}")
        self.t = t
        self.snapshot = snapshot


def nan_guard(arrays: dict[str, np.ndarray], t: float) -> None:
    """Abort with a diagnostic payload if any array went non-finite."""
    bad = {name: np.asarray(a) for name, a in arrays.items() if not np.all(np.isfinite(a))}
    if bad:
        raise SimulationDiverged(t, bad)


@dataclass
class StepDiagnostics:
    """Everything worth logging about one control synthesis."""

    e_F: Field
    e_L: Field
    alpha: float
    C: float
    M_FF: float
    M_FB: float
    min_mass_estimate: float
    ks_bound_active: bool
    decay_bound_rhs: float


@dataclass
class ControlOutput:
    u: Field
    v_FB: Field
    rho_bar_L: Field
    diagnostics: StepDiagnostics


class ControlContext:
    """Run-invariant pieces of the synthesis: target geometry, gains, and the
    reference-rate estimator state."""

    def __init__(
        self,
        target: TargetDensity,
        vff: Field,
        fgains: FollowerGains,
        lgains: LeaderGains,
        kernel_params: KernelParams,
        M_L: float,
        estimator: ReferenceRateEstimator,
        smoother: Smoother | None = None,
        alpha_override: float | None = None,
    ) -> None:
        self.target = target
        self.vff = vff
        self.fgains = fgains
        self.lgains = lgains
        self.kernel_params = kernel_params
        self.M_L = M_L
        self.estimator = estimator
        self.smoother = smoother
        self.alpha_override = alpha_override
        self.g1 = g1_inf_norm(target)
        self.target_d1_inf = norm(derivative(target.field), "linf")
        self.target_d2_inf = norm(second_derivative(target.field), "linf")
        self.kernel_samples = kernel_field(target.field.grid, kernel_params)
        self.rho_ff = deconvolve(vff, kernel_params)
        self.M_FF = lifted_mass(self.rho_ff)

    def min_mass_estimate(self, e_F: Field, rho_F: Field) -> float:
        m_s = switching_mass(e_F, rho_F, self.fgains, self.kernel_params)
        return self.M_FF + self.fgains.k * self.target_d1_inf * m_s

    def decay_bound_rhs(self, e_F: Field, alpha: float) -> float:
        """Contraction monitor; negative values certify the follower error
        shrinks at this step."""
        g = self.fgains
        c1 = g.D * (1.0 - alpha) * self.g1 - 2.0 * g.D - alpha * g.kp_f
        c2 = alpha * g.D * self.target_d2_inf + g.k * self.target_d1_inf - alpha * g.ks_f
        return float(c1 * lyapunov(e_F) + c2 * norm(e_F, "l1"))

    def ks_f_bound(self, alpha: float) -> float:
        g = self.fgains
        return (alpha * g.D * self.target_d2_inf + g.k * self.target_d1_inf) / alpha

    def synthesize(self, rho_F: Field, rho_L: Field, dt: float | None = None) -> ControlOutput:
        """One pass of the two-loop synthesis: follower error to leader
        reference to control field u."""
        e_F = error_field(self.target, rho_F)
        q_F = qf_field(e_F, self.fgains)
        v_FB = invert_flux(q_F, rho_F, self.fgains.rho_floor)
        ref = assemble_reference_from_components(
            self.rho_ff,
            deconvolve(v_FB, self.kernel_params),
            self.alpha_override,
            self.M_L,
        )
        rho_bar_L = (
            self.smoother.apply(ref.rho_bar_L) if self.smoother is not None else ref.rho_bar_L
        )
        rate = self.estimator.update(rho_bar_L, dt)
        # Leaders track the estimator's moving average: the rate feedthrough
        # is then exact for the tracked signal, so the inner loop stays ahead
        # of the fast-slewing switching feedback.
        tracked = self.estimator.smoothed()
        e_L = Field(rho_L.grid, tracked.values - rho_L.values)
        q_L = ql_field(e_L, rate, self.lgains)
        u = leader_velocity(q_L, rho_L, self.lgains)

        diag = StepDiagnostics(
            e_F=e_F,
            e_L=e_L,
            alpha=ref.alpha,
            C=ref.C,
            M_FF=ref.M_FF,
            M_FB=ref.M_FB,
            min_mass_estimate=self.min_mass_estimate(e_F, rho_F),
            ks_bound_active=bool(self.fgains.ks_f > self.ks_f_bound(ref.alpha)),
            decay_bound_rhs=self.decay_bound_rhs(e_F, ref.alpha),
        )
        return ControlOutput(u=u, v_FB=v_FB, rho_bar_L=rho_bar_L, diagnostics=diag)
