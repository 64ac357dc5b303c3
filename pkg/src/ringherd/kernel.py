"""Leader-follower interaction kernel on the ring and its deconvolution.

The kernel is odd, vanishes at 0 and +-pi, and decays exponentially with the
characteristic interaction length ell. Its key property: convolution against
a density can be inverted in closed form (a derivative plus a weighted
antiderivative), up to an additive constant that downstream reference
assembly fixes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Field, Grid, cumulative_integral, derivative

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class KernelParams:
    """Interaction parameters. ell is the characteristic interaction length."""

    ell: float

    def __post_init__(self) -> None:
        if not (self.ell > 0):
            raise ValueError("ell must be positive")


def eval_kernel(x, p: KernelParams):
    """Evaluate the interaction kernel at wrapped displacements x in [-pi, pi].

    Odd by construction; zero at x = 0 and x = +-pi, hence continuous across
    the periodic seam.
    """
    ell = p.ell
    ax = np.abs(np.asarray(x, dtype=float))
    denom = np.expm1(TWO_PI / ell)
    out = np.sign(x) / denom * (np.exp((TWO_PI - ax) / ell) - np.exp(ax / ell))
    return float(out) if out.ndim == 0 else out


def eval_kernel_derivative(x, p: KernelParams):
    """Classical derivative of the kernel, an even function of x.

    The kernel has a jump at x = 0 (sgn switches); the derivative returned at
    x = 0 is the right-limit, which is immaterial for the quadrature norms
    this feeds.
    """
    ell = p.ell
    ax = np.abs(np.asarray(x, dtype=float))
    denom = np.expm1(TWO_PI / ell)
    out = -(1.0 / ell) * (np.exp((TWO_PI - ax) / ell) + np.exp(ax / ell)) / denom
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=16)
def kernel_field(grid: Grid, p: KernelParams) -> Field:
    """Kernel sampled at the grid nodes. Cached: fields are immutable and the
    simulation loops request the same samples every step."""
    return Field(grid, eval_kernel(grid.nodes, p))


@lru_cache(maxsize=16)
def kernel_derivative_field(grid: Grid, p: KernelParams) -> Field:
    """Kernel derivative sampled at the grid nodes (right-limit at 0)."""
    return Field(grid, eval_kernel_derivative(grid.nodes, p))


def deconvolve(v: Field, p: KernelParams) -> Field:
    """Recover the density generating velocity field v through convolution.

    rho = v_x / 2 - (1 / (2 ell^2)) * int v, anchored at -pi. The free
    additive constant is fixed to zero here; reference assembly reintroduces
    a single scalar offset, so it is not double-counted.
    """
    dv = derivative(v)
    iv = cumulative_integral(v)
    vals = 0.5 * dv.values - iv.values / (2.0 * p.ell * p.ell)
    return Field(v.grid, vals)
