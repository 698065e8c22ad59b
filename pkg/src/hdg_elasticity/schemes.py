"""Per-scheme drivers: pick spaces, form and load, solve, wrap the result."""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import linalg
from .assembly import (ConfigError, ForcingSpec, SchemeConfig, apply_dirichlet, assemble_hdg,
                       assemble_m1, assemble_m2, expand_solution, normalize_flavor)
from .mesh import Mesh
from .spaces import FacetSpace, FieldFunction

__all__ = ["DiscreteSolution", "solve_scheme", "dof_counts", "ConfigError"]


@dataclass
class DiscreteSolution:
    scheme: str
    config: SchemeConfig
    mesh: Mesh
    u_T: FieldFunction
    u_F: Optional[np.ndarray] = None  # facet coefficients on ``facet_space``
    facet_space: Optional[FacetSpace] = None
    p_h: Optional[FieldFunction] = None
    ndof: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def is_hdg(self):
        return self.facet_space is not None


def dof_counts(scheme, spaces):
    """Total, element-condensable and globally coupled unknowns of a scheme.

    For the HDG schemes the interior BDM moments and the per-side top normal
    moments of the relaxed space are local to one cell and could be
    condensed; the remaining normal moments and all tangential facet
    coefficients couple neighbouring cells.
    """
    scheme = scheme.upper()
    if scheme in ("S1", "S2", "S3"):
        V, M = spaces["u_T"], spaces["u_F"]
        condensable = V.ndof - V.n_facet_dofs
        if V.relaxed:
            condensable += V.n_facet_dofs - V.mesh.n_facets * V.k
        total = V.ndof + M.ndof
    else:
        V = spaces["u"]
        ni = (V.k - 1) * (V.k - 2) // 2
        condensable = 2 * ni * V.mesh.n_cells
        total = sum(s.ndof for s in spaces.values())
        if "p" in spaces:
            Q = spaces["p"]
            condensable += (Q.k - 1) * (Q.k - 2) // 2 * Q.mesh.n_cells
    return {"total": int(total), "condensable": int(condensable),
            "coupled": int(total - condensable)}


def _check(config: SchemeConfig, mesh: Mesh):
    config.validate()
    known = mesh.flavor in ("uniform", "barycentric")
    if known and normalize_flavor(config.mesh_flavor) != mesh.flavor:
        raise ConfigError(f"config asks for a {config.mesh_flavor} mesh, got {mesh.flavor}")


def _solve_m2_schur(system, lam):
    """Pressure-eliminated Taylor-Hood: (A + lam B^T M^-1 B) u = f."""
    A, B, M = system.blocks["A"], system.blocks["B"], system.blocks["M"]
    MinvB = spla.splu(sp.csc_matrix(M)).solve(B.toarray())
    S = sp.csr_matrix(A + lam * (B.T @ MinvB))
    nu = A.shape[0]
    sub = type(system)(S, system.b[:nu], system.constrained, system.values)
    Aff, bf, free = apply_dirichlet(sub)
    x, info = linalg.solve_spd(Aff, bf, return_info=True)
    u = expand_solution(sub, x, free)
    p = lam * (MinvB @ u)
    return np.concatenate([u, p]), info


def solve_scheme(mesh: Mesh, config: SchemeConfig, forcing: ForcingSpec, bc=None,
                 schur=False) -> DiscreteSolution:
    """Assemble and solve one scheme; ``bc`` is the Dirichlet datum or None for zero.

    ``schur`` selects the pressure-eliminated Taylor-Hood variant (M2 only).
    """
    _check(config, mesh)
    scheme = config.scheme.upper()
    if schur and scheme != "M2":
        raise ConfigError("the Schur-complement path exists for M2 only")
    if scheme in ("M1", "SV"):
        system = assemble_m1(mesh, config, forcing, bc)
    elif scheme == "M2":
        system = assemble_m2(mesh, config, forcing, bc)
    else:
        system = assemble_hdg(mesh, config, forcing, bc)
    spaces = system.blocks["spaces"]

    t0 = time.perf_counter()
    if scheme == "M2" and schur:
        if config.stokes_limit:
            raise ConfigError("the Schur path needs a finite lambda")
        x, info = _solve_m2_schur(system, config.lam)
    else:
        Aff, bf, free = apply_dirichlet(system)
        if scheme == "M2":
            xf, info = linalg.solve_symmetric_indefinite(Aff, bf, return_info=True)
        else:
            xf, info = linalg.solve_spd(Aff, bf, return_info=True)
        x = expand_solution(system, xf, free)
    stats = {"residual": info["residual"], "solve_seconds": time.perf_counter() - t0,
             "n_free": len(system.free)}
    if "min_rayleigh" in system.blocks:
        stats["min_rayleigh"] = system.blocks["min_rayleigh"]

    ndof = dof_counts(scheme, spaces)
    if scheme in ("S1", "S2", "S3"):
        V, M = spaces["u_T"], spaces["u_F"]
        return DiscreteSolution(scheme, config, mesh, FieldFunction(V, x[:V.ndof]),
                                u_F=x[V.ndof:], facet_space=M, ndof=ndof, stats=stats)
    V = spaces["u"]
    p_h = None
    if scheme == "M2":
        Q = spaces["p"]
        p_h = FieldFunction(Q, x[V.ndof:V.ndof + Q.ndof])
    return DiscreteSolution(scheme, config, mesh, FieldFunction(V, x[:V.ndof]), p_h=p_h,
                            ndof=ndof, stats=stats)
