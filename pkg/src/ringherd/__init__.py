"""Robust leader-follower density control on a periodic 1-D domain.

Simulation and control engine: agent-level SDE simulation, macroscopic
bounding PDEs, density bridges, the two-loop feedback law, and feasibility
bounds, with an experiment CLI for the validation studies.
"""

__version__ = "0.1.0"

from .density import Smoother, TargetDensity, estimate_density, von_mises_target
from .follower_control import FeasibilityError, FollowerGains, LeaderReference
from .geometry import Field, Grid
from .kernel import KernelParams
from .leader_control import LeaderGains
from .loop import SimulationDiverged
from .scenario import MetricsLog, Scenario

__all__ = [
    "Field",
    "Grid",
    "KernelParams",
    "Smoother",
    "TargetDensity",
    "FollowerGains",
    "LeaderGains",
    "LeaderReference",
    "FeasibilityError",
    "SimulationDiverged",
    "MetricsLog",
    "Scenario",
    "estimate_density",
    "von_mises_target",
    "__version__",
]
