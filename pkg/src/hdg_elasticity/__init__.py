"""Locking-free and gradient-robust discretizations of 2D linear elasticity.

Six methods share one mesh/space/assembly stack: continuous Lagrange (M1),
Taylor-Hood (M2), Scott-Vogelius on barycentric meshes (SV) and three
hybrid DG schemes on BDM or relaxed BDM spaces (S1, S2, S3).
"""

from .analysis import ErrorReport, compute_errors, eoc_table, robustness_metrics
from .assembly import ConfigError, ForcingSpec, SchemeConfig
from .mesh import Mesh, barycentric_refine, build_mesh, build_uniform_unit_square
from .problems import get_problem
from .schemes import DiscreteSolution, solve_scheme

__all__ = [
    "ConfigError", "DiscreteSolution", "ErrorReport", "ForcingSpec", "Mesh", "SchemeConfig",
    "barycentric_refine", "build_mesh", "build_uniform_unit_square", "compute_errors",
    "eoc_table", "get_problem", "robustness_metrics", "solve_scheme",
]
