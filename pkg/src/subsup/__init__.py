"""Sub-/supersolution solvers for singular quasilinear p-Laplacian systems."""

from .domain import Field, Grid, Interval01, RadialBall, build_grid
from .plap import NonConvergence, PlapProblem, SingularRhs, solve
from .systems import ExponentConfig, SystemKind, check_admissibility

__all__ = [
    "ExponentConfig",
    "Field",
    "Grid",
    "Interval01",
    "NonConvergence",
    "PlapProblem",
    "RadialBall",
    "SingularRhs",
    "SystemKind",
    "build_grid",
    "check_admissibility",
    "solve",
]
