"""Target densities, the micro-to-macro bridge, and error metrics.

The bridge is a nearest-node histogram filtered with a wrapped Gaussian,
normalized on the grid so that smoothing conserves mass exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import (
    Field,
    Grid,
    circular_convolve,
    integrate,
    norm,
    wrap,
    zero_field,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TargetDensity:
    """Strictly positive density profile with a prescribed total mass."""

    field: Field
    mass: float

    def __post_init__(self) -> None:
        if not (self.mass > 0):
            raise ValueError("mass must be positive")
        if self.field.values.min() <= 0:
            raise ValueError("target density must be strictly positive")
        total = integrate(self.field)
        if abs(total - self.mass) > 1e-8 * max(1.0, self.mass):
            raise ValueError(
                f"target integrates to {total}, declared mass {self.mass}"
            )


@dataclass(frozen=True)
class Smoother:
    """Wrapped-Gaussian filter of standard deviation sigma (radians)."""

    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")

    @lru_cache(maxsize=16)
    def kernel(self, grid: Grid) -> Field:
        # Sum the three nearest periodic images, then normalize on the grid
        # so the filter has exactly unit integral (mass conservation).
        x = grid.nodes
        s2 = 2.0 * self.sigma * self.sigma
        vals = sum(np.exp(-((x + k * 2.0 * np.pi) ** 2) / s2) for k in (-1, 0, 1))
        return Field(grid, vals / (grid.spacing * vals.sum()))

    def apply(self, f: Field) -> Field:
        return circular_convolve(self.kernel(f.grid), f)


def von_mises_target(grid: Grid, kappa: float, mu: float, mass: float) -> TargetDensity:
    """Von Mises profile exp(kappa*cos(x - mu)) normalized to the given mass
    by grid quadrature."""
    unnorm = np.exp(kappa * np.cos(grid.nodes - mu))
    z = grid.spacing * unnorm.sum()
    return TargetDensity(Field(grid, mass * unnorm / z), mass)


def estimate_density(
    positions: np.ndarray,
    mass_per_agent: float,
    grid: Grid,
    smoother: Smoother,
) -> Field:
    """Micro-to-macro bridge: nearest-node histogram + Gaussian filtering.

    Output integrates to len(positions) * mass_per_agent to machine
    precision; empty input yields the zero field.
    """
    if mass_per_agent <= 0:
        raise ValueError("mass_per_agent must be positive")
    positions = np.asarray(positions, dtype=float)
    if positions.size == 0:
        log.warning("estimate_density called with no agents; returning zero field")
        return zero_field(grid)
    n = grid.n_points
    h = grid.spacing
    idx = np.rint((wrap(positions) + np.pi) / h).astype(np.int64) % n
    counts = np.bincount(idx, minlength=n)
    hist = Field(grid, counts * (mass_per_agent / h))
    return smoother.apply(hist)


def error_field(target: TargetDensity, estimate: Field) -> Field:
    """Pointwise control error: target minus estimated density."""
    if target.field.grid != estimate.grid:
        raise ValueError("target and estimate live on different grids")
    return Field(estimate.grid, target.field.values - estimate.values)


def lyapunov(e: Field) -> float:
    """Quadratic functional 0.5 * ||e||_2^2 monitored for convergence."""
    n2 = norm(e, "l2")
    return 0.5 * n2 * n2
