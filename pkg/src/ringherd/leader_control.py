"""Leaders' tracking controller.

Leaders chase the time-varying reference density produced by the followers'
loop. The reference rate is estimated by backward differences on an
exponential moving average (suppresses estimation shot noise); the tracking
flux mirrors the followers' law plus the reference-rate feedthrough.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .follower_control import invert_flux
from .geometry import Field, Grid, cumulative_integral, integrate, norm, zero_field


@dataclass(frozen=True)
class LeaderGains:
    """Leader-loop constants; r is the assumed leader perturbation bound."""

    kp_l: float
    ks_l: float
    r: float
    eta: float
    rho_floor: float

    def __post_init__(self) -> None:
        if self.kp_l <= 0:
            raise ValueError("kp_l must be positive")
        if self.ks_l < 0 or self.r < 0:
            raise ValueError("ks_l and r must be non-negative")
        if self.eta <= 0 or self.rho_floor <= 0:
            raise ValueError("eta and rho_floor must be positive")


class ReferenceRateEstimator:
    """Rate of change of an exponential moving average of the reference
    density. Owned by a single run; mutated sequentially.

    smoothing is the averaging weight at the nominal control period; for
    variable step sizes the weight rescales so the filter keeps the time
    constant dt_control / smoothing. The rate is the difference of two
    cascaded averages over that time constant (exact for steadily ramping
    references): differencing a noisy average over a single control period
    would amplify estimation shot noise by 1/dt. With smoothing = 1 no
    filtering is applied and the rate is the exact one-step backward
    difference, appropriate for noise-free references.
    """

    def __init__(self, grid: Grid, smoothing: float, dt_control: float) -> None:
        if not (0.0 < smoothing <= 1.0):
            raise ValueError("smoothing factor must lie in (0, 1]")
        if dt_control <= 0:
            raise ValueError("dt_control must be positive")
        self.grid = grid
        self.smoothing = smoothing
        self.dt_control = dt_control
        self.time_constant = dt_control / smoothing
        self._ema: np.ndarray | None = None
        self._last_ema: np.ndarray | None = None

    def update(self, rho_bar_L: Field, dt: float | None = None) -> Field:
        """Feed the next reference sample; returns the rate estimate (zero on
        the first call). dt overrides the configured control period."""
        if rho_bar_L.grid != self.grid:
            raise ValueError("reference on a different grid")
        step = self.dt_control if dt is None else dt
        if self._ema is None:
            self._ema = rho_bar_L.values.copy()
            self._last_ema = self._ema.copy()
            return zero_field(self.grid)
        if self.smoothing >= 1.0:
            rate = (rho_bar_L.values - self._ema) / step
            self._ema = rho_bar_L.values.copy()
            self._last_ema = self._ema.copy()
            return Field(self.grid, rate)
        lam = min(0.5, step / self.time_constant)
        self._ema = (1.0 - lam) * self._ema + lam * rho_bar_L.values
        self._last_ema = (1.0 - lam) * self._last_ema + lam * self._ema
        # the stages lag each other by (1 - lam) * step / lam, which makes the
        # difference quotient exact for steadily ramping references
        rate = (self._ema - self._last_ema) * (lam / ((1.0 - lam) * step))
        return Field(self.grid, rate)

    def smoothed(self) -> Field:
        """Current moving average; the signal the rate estimate differentiates.

        Tracking this signal (rather than the raw reference) keeps the rate
        feedthrough consistent with the tracked target: the raw reference can
        slew arbitrarily fast through the switching feedback, and chasing it
        with the rate of a different signal destabilizes the inner loop.
        """
        if self._ema is None:
            raise RuntimeError("no reference fed yet")
        return Field(self.grid, self._ema)


def ql_field(e_L: Field, rate: Field, gains: LeaderGains) -> Field:
    """Leader flux divergence: tracking feedback plus reference-rate
    feedthrough, shifted to zero mean."""
    if e_L.grid != rate.grid:
        raise ValueError("fields live on different grids")
    raw = (
        -gains.kp_l * e_L.values
        - gains.ks_l * np.tanh(gains.eta * e_L.values)
        + rate.values
    )
    return Field(e_L.grid, raw - raw.mean())


def leader_velocity(q_L: Field, rho_L: Field, gains: LeaderGains) -> Field:
    """Macroscopic control field u solving [rho_L * u]_x = q_L.

    The flux integration constant is free (any constant leaves the divergence
    unchanged); it is chosen to minimize the peak speed, so mass transport is
    routed the short way around the ring instead of through the periodic
    seam. The design-path inversion keeps the constant at zero, where
    deconvolution absorbs it.
    """
    if abs(integrate(q_L)) > 1e-8:
        raise ValueError("non-periodic flux: q_L must have zero mean")
    flux = cumulative_integral(q_L).values
    weights = 1.0 / np.maximum(rho_L.values, gains.rho_floor)

    def peak(c: float) -> float:
        return float((np.abs(flux - c) * weights).max())

    lo, hi = float(flux.min()), float(flux.max())
    for _ in range(60):  # ternary search; peak(c) is convex in c
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if peak(m1) <= peak(m2):
            hi = m2
        else:
            lo = m1
    c_star = 0.5 * (lo + hi)
    return Field(q_L.grid, (flux - c_star) * weights)


def ks_l_requirement(rho_bar_L: Field, bound: float) -> float:
    """Switching gain the leaders need to reject perturbations of the given
    bound while tracking this reference."""
    return bound * norm(rho_bar_L, "linf")
