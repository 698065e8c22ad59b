"""Error norms, discrete energy norms, EOC tables and lambda-robustness fits."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import polybasis as pb
from .assembly import assemble_hdg_parts
from .spaces import edge_ref_points, facet_param

QUAD_DEGREE = 14
GRADIENT_ROBUST_SLOPE = -0.9
PLATEAU_SLOPE = -0.3


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorReport:
    l2_err: float
    h1semi_err: float
    div_err: float
    energy_err: float
    sol_norm_1h: float
    grad_norm: float

    def as_dict(self):
        return asdict(self)


def _sym(G):
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def facet_jump_sq(solution, quad_degree=QUAD_DEGREE):
    """sum_T sum_{F in dT} (2 / h_F) ||Pi_M (u_T^t - u_F)||_F^2 for an HDG solution."""
    mesh, M = solution.mesh, solution.facet_space
    k = M.k
    eq = pb.edge_rule(quad_degree)
    trace = solution.u_T.cell_values(edge_ref_points(eq.points))  # (T, 3, nq, 2)
    tan = mesh.facet_tangent[mesh.cell_facets]
    ut = np.einsum("teqc,tec->teq", trace, tan)
    L = pb.eval_edge_basis(k - 1, facet_param(mesh, eq.points))  # (T, 3, nq, k)
    coef = solution.u_F[M.facet_dofs][mesh.cell_facets]  # (T, 3, k)
    uf = np.einsum("tej,teqj->teq", coef, L)
    # Pi_M coefficients; (2/h_F) |F| cancels to 2
    c = np.einsum("teq,teqm,q->tem", ut - uf, L, eq.weights)
    return 2.0 * float(np.sum(c**2))


def compute_errors(solution, exact=None, quad_degree=QUAD_DEGREE) -> ErrorReport:
    """Norms of ``u - u_h`` (NaN when no exact solution is known) and of ``u_h``.

    ``exact`` carries callables ``u``, ``grad`` (shape (2, 2, ...)) and ``div``.
    For HDG solutions the energy norm includes the projected tangential
    jump ``Pi_M(u_F - u_T^t)``; the exact field drops out of it because its
    trace is single valued.
    """
    mesh, uh = solution.mesh, solution.u_T
    mu = solution.config.mu
    q = pb.triangle_rule(quad_degree)
    w = q.weights[None, :] * mesh.det_jacobians[:, None]
    Vh = uh.cell_values(q.points)
    Gh = uh.cell_gradients(q.points)
    jump = facet_jump_sq(solution, quad_degree) if solution.is_hdg else 0.0
    grad_norm = math.sqrt(np.einsum("tq,tqcd,tqcd->", w, Gh, Gh))
    Eh = _sym(Gh)
    sol_norm = math.sqrt(2.0 * np.einsum("tq,tqcd,tqcd->", w, Eh, Eh) + jump)
    if exact is None:
        nan = float("nan")
        return ErrorReport(nan, nan, nan, nan, sol_norm, grad_norm)
    X = mesh.to_physical(q.points)
    x, y = X[..., 0], X[..., 1]
    eu = np.moveaxis(np.asarray(exact.u(x, y), float), 0, -1) - Vh
    eG = np.moveaxis(np.asarray(exact.grad(x, y), float), (0, 1), (-2, -1)) - Gh
    ediv = np.asarray(exact.div(x, y), float) - (Gh[..., 0, 0] + Gh[..., 1, 1])
    eE = _sym(eG)
    l2 = math.sqrt(np.einsum("tq,tqc,tqc->", w, eu, eu))
    h1 = math.sqrt(np.einsum("tq,tqcd,tqcd->", w, eG, eG))
    div = math.sqrt(np.einsum("tq,tq,tq->", w, ediv, ediv))
    energy = math.sqrt(mu * (2.0 * np.einsum("tq,tqcd,tqcd->", w, eE, eE) + jump))
    return ErrorReport(l2, h1, div, energy, sol_norm, grad_norm)


def energy_gram(mesh, V, M, mu=1.0):
    """Gram matrix of mu ||.||_{1,h}^2 on (V, M) from the HDG form without consistency terms."""
    G, _ = assemble_hdg_parts(mesh, V, M, mu, alpha=1.0, consistency=False, penalty=2.0 * mu)
    return G


def eoc_table(errors):
    """Rates log2(e_L / e_{L+1}) for successive halvings."""
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise DegenerateError("need at least two levels")
    if not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise DegenerateError(f"errors must be finite and positive, got {e}")
    return np.log2(e[:-1] / e[1:])


@dataclass(frozen=True)
class RobustnessReport:
    slope: float
    plateau: float
    gradient_robust: bool
    plateaued: bool


def fitted_slope(lams, norms):
    """Least-squares slope of log(norm) against log(lambda)."""
    lams = np.asarray(lams, float)
    norms = np.asarray(norms, float)
    if lams.size < 2 or np.any(norms <= 0) or np.any(lams <= 0):
        raise DegenerateError("need two or more positive samples")
    return float(np.polyfit(np.log(lams), np.log(norms), 1)[0])


def robustness_metrics(lams, norms) -> RobustnessReport:
    """Slope over the whole sweep; plateau is the norm at the largest lambda."""
    order = np.argsort(lams)
    lams = np.asarray(lams, float)[order]
    norms = np.asarray(norms, float)[order]
    slope = fitted_slope(lams, norms)
    return RobustnessReport(slope, float(norms[-1]), slope <= GRADIENT_ROBUST_SLOPE,
                            slope >= PLATEAU_SLOPE)
