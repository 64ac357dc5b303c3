"""Followers' control synthesis.

Produces the feedforward velocity, the robust feedback flux, its inversion to
a velocity, and the deconvolution-based leader reference density with the
feasibility logic (mixing weight alpha, uniform lift) that keeps the
reference strictly positive and integrating to the available leader mass.
Also provides the minimum-leader-mass bound and the coupling constants used
by the timescale-separation guideline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import TargetDensity
from .geometry import (
    Field,
    cumulative_integral,
    derivative,
    integrate,
    norm,
    second_derivative,
)
from .kernel import KernelParams, deconvolve, kernel_derivative_field, kernel_field

TWO_PI = 2.0 * np.pi

# Smallest admissible feedback weight; the gain bound diverges as alpha -> 0,
# so values below this are treated as infeasible rather than extrapolated.
ALPHA_MIN = 1e-3


class FeasibilityError(ValueError):
    """Raised when no admissible leader reference exists for the given mass."""


@dataclass(frozen=True)
class FollowerGains:
    """Follower-loop constants.

    kp_f/ks_f: proportional and switching gains; eta: slope of the tanh
    regularization of sign; k: assumed per-agent perturbation bound;
    D: diffusion coefficient; rho_floor: density clamp for flux inversion.
    """

    kp_f: float
    ks_f: float
    eta: float
    k: float
    D: float
    rho_floor: float

    def __post_init__(self) -> None:
        if self.kp_f <= 0 or self.eta <= 0:
            raise ValueError("kp_f and eta must be positive")
        if self.ks_f < 0 or self.k < 0:
            raise ValueError("ks_f and k must be non-negative")
        if self.D <= 0 or self.rho_floor <= 0:
            raise ValueError("D and rho_floor must be positive")


@dataclass(frozen=True)
class LeaderReference:
    """Assembled leader reference density and its feasibility bookkeeping."""

    rho_bar_L: Field
    alpha: float
    C: float
    M_FF: float
    M_FB: float


def feedforward_velocity(target: TargetDensity, D: float) -> Field:
    """Velocity whose stationary density is the target: D * (log target)'."""
    tv = target.field.values
    if tv.min() <= 0:
        raise ValueError("target must be strictly positive")
    return Field(target.field.grid, D * derivative(target.field).values / tv)


def g1_inf_norm(target: TargetDensity) -> float:
    """Sup norm of the derivative of the target's log-derivative.

    Values below 2 are required for the feedforward-only loop to contract;
    callers compare against that threshold.
    """
    logslope = Field(
        target.field.grid, derivative(target.field).values / target.field.values
    )
    return norm(derivative(logslope), "linf")


def ks_f_lower_bound(alpha: float, target: TargetDensity, gains: FollowerGains) -> float:
    """Switching gain needed to dominate diffusion mismatch and perturbations
    at feedback weight alpha (grid sup norms)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive (bound diverges at 0)")
    d2 = norm(second_derivative(target.field), "linf")
    d1 = norm(derivative(target.field), "linf")
    return (alpha * gains.D * d2 + gains.k * d1) / alpha


def ks_f_with_margin(target: TargetDensity, D: float, bound: float, factor: float = 5.0) -> float:
    """Switching gain set a safety factor above the alpha = 1 requirement."""
    d2 = norm(second_derivative(target.field), "linf")
    d1 = norm(derivative(target.field), "linf")
    return factor * (D * d2 + bound * d1)


def qf_field(e: Field, gains: FollowerGains) -> Field:
    """Feedback flux divergence: proportional plus regularized switching term,
    shifted to zero mean so the flux is periodic."""
    raw = -gains.kp_f * e.values - gains.ks_f * np.tanh(gains.eta * e.values)
    return Field(e.grid, raw - raw.mean())


def invert_flux(q: Field, rho: Field, rho_floor: float) -> Field:
    """Solve [rho * v]_x = q for v on the ring.

    Requires q to have zero mean (periodic single-valued flux); the flux
    integration constant is fixed to zero and rho is clamped below at
    rho_floor to keep v bounded.
    """
    if abs(integrate(q)) > 1e-8:
        raise ValueError("non-periodic flux: q must have zero mean")
    flux = cumulative_integral(q)
    return Field(q.grid, flux.values / np.maximum(rho.values, rho_floor))


def lifted_mass(rho: Field) -> float:
    """Mass of the density after subtracting its minimum (the non-negative
    representative of a deconvolved component).

    Deconvolution fixes the arbitrary additive constant to zero, so the raw
    integral carries no physical meaning; the budget a component actually
    claims from the leader mass is the mass of its lifted version.
    """
    return integrate(rho) - TWO_PI * float(rho.values.min())


def assemble_reference_from_components(
    rho_ff: Field,
    rho_fb: Field,
    alpha_override: float | None,
    M_L: float,
) -> LeaderReference:
    """Mix already-deconvolved feedforward/feedback densities into a
    physically meaningful leader reference.

    Each component is lifted to its non-negative representative; alpha then
    maximizes the feedback weight that fits the leader mass budget, and the
    uniform lift C spends whatever budget remains. By construction the
    result is non-negative (a tiny lift makes it strictly positive: in the
    budget-limited regime the combination touches zero at the binding
    minimum) and integrates exactly to M_L.
    """
    if M_L <= 0:
        raise ValueError("M_L must be positive")
    m_ff = float(rho_ff.values.min())
    m_fb = float(rho_fb.values.min())
    M_FF = integrate(rho_ff) - TWO_PI * m_ff
    M_FB = integrate(rho_fb) - TWO_PI * m_fb
    if M_L <= M_FF:
        raise FeasibilityError(
            f"insufficient leader mass for feedforward: M_L={M_L} <= M_FF={M_FF}"
        )

    if alpha_override is not None:
        alpha = float(alpha_override)
    elif M_FB > M_FF:
        alpha = (M_L - M_FF) / (M_FB - M_FF)
    else:
        alpha = 1.0
    alpha = min(max(alpha, ALPHA_MIN), 1.0)

    C = max(0.0, (M_L - (1.0 - alpha) * M_FF - alpha * M_FB) / TWO_PI)
    vals = (
        (1.0 - alpha) * (rho_ff.values - m_ff)
        + alpha * (rho_fb.values - m_fb)
        + C
    )
    if vals.min() <= 0.0:  # budget-limited case: the combination touches zero
        vals = vals + 1e-9 * M_L / TWO_PI
    # Multiplicative normalization: exact mass without disturbing positivity.
    # A no-op up to roundoff except when alpha was clamped away from the
    # budget-exact value.
    vals = vals * (M_L / (rho_ff.grid.spacing * vals.sum()))
    return LeaderReference(Field(rho_ff.grid, vals), alpha, C, M_FF, M_FB)


def assemble_leader_reference(
    vff: Field,
    vfb: Field,
    alpha_override: float | None,
    M_L: float,
    p: KernelParams,
) -> LeaderReference:
    """Deconvolve the feedforward and feedback velocities and mix them into a
    leader reference; see assemble_reference_from_components."""
    return assemble_reference_from_components(
        deconvolve(vff, p), deconvolve(vfb, p), alpha_override, M_L
    )


def switching_mass(e_worst: Field, rho_F: Field, gains: FollowerGains, p: KernelParams) -> float:
    """Leader-mass claim per unit switching gain: the switching term alone
    run through the (linear) flux inversion and deconvolution pipeline, then
    measured as the mass of its lifted (non-negative) representative."""
    raw = -np.tanh(gains.eta * e_worst.values)
    q_s = Field(e_worst.grid, raw - raw.mean())
    v_s = invert_flux(q_s, rho_F, gains.rho_floor)
    return lifted_mass(deconvolve(v_s, p))


def minimum_leader_mass(
    target: TargetDensity,
    gains: FollowerGains,
    e_worst: Field,
    p: KernelParams,
) -> float:
    """Leader mass needed at the given error state: feedforward mass plus the
    robustness surcharge k * ||target'||_inf * M_s (linear in k)."""
    rho_f = Field(e_worst.grid, target.field.values - e_worst.values)
    m_s = switching_mass(e_worst, rho_f, gains, p)
    vff = feedforward_velocity(target, gains.D)
    m_ff = lifted_mass(deconvolve(vff, p))
    return m_ff + gains.k * norm(derivative(target.field), "linf") * m_s


def coupling_constants(target: TargetDensity, p: KernelParams) -> tuple[float, float]:
    """Constants (J, S) bounding how the leaders' transient perturbs the
    followers' contraction; grid-quadrature norms."""
    grid = target.field.grid
    kf = norm(kernel_field(grid, p), "l2")
    kdf = norm(kernel_derivative_field(grid, p), "l2")
    J = 2.0 * norm(derivative(target.field), "l2") * kf + 2.0 * norm(target.field, "l2") * kdf
    S = np.sqrt(2.0) * kf
    return float(J), float(S)


def timescale_check(kp_l: float, kp_f: float, alpha: float, D: float) -> tuple[bool, float]:
    """Leader gain must dominate the followers' contraction rate; returns
    (satisfied with 10x margin, achieved ratio)."""
    threshold = 2.0 * (2.0 * D + alpha * kp_f)
    ratio = kp_l / threshold
    return bool(ratio >= 10.0), float(ratio)
