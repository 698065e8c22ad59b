"""Sparse assembly of the six elasticity discretizations.

All element integrals are formed in the raw basis of :mod:`.spaces` and
then pulled to local DOFs with the space's ``C`` matrices. Geometry is
affine, so volume stiffness integrals reduce to reference tables mapped by
the inverse Jacobians.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import polybasis as pb
from .mesh import Mesh
from .spaces import (BDMSpace, FacetSpace, LagrangeSpace, Space, edge_ref_points,
                     facet_param, raw_values)

SCHEMES = ("M1", "M2", "SV", "S1", "S2", "S3")
LOAD_QUAD_DEGREE = 14
# barycentric cells have worse trace-inverse constants; 10 leaves a_h^mu indefinite there
DEFAULT_ALPHA0 = {"uniform": 10.0, "barycentric": 20.0}


def normalize_flavor(flavor):
    if flavor in ("bary", "barycentric"):
        return "barycentric"
    if flavor == "uniform":
        return flavor
    raise ConfigError(f"unknown mesh flavor {flavor!r}")


class ConfigError(ValueError):
    pass


class CoercivityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    k: int
    mu: float = 1.0
    lam: float = 1.0
    alpha0: Optional[float] = None
    mesh_flavor: str = "uniform"
    stokes_limit: bool = False

    @property
    def penalty0(self):
        """alpha_0, defaulting per mesh flavor."""
        if self.alpha0 is not None:
            return self.alpha0
        return DEFAULT_ALPHA0[normalize_flavor(self.mesh_flavor)]

    @property
    def alpha(self):
        return self.penalty0 * self.k**2

    def validate(self):
        s = self.scheme.upper()
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if s in ("S2", "S3") and self.k < 2:
            raise ConfigError(f"{s} needs k >= 2")
        if s == "M2" and self.k < 2:
            raise ConfigError("Taylor-Hood (M2) needs k >= 2")
        if s == "SV" and normalize_flavor(self.mesh_flavor) != "barycentric":
            raise ConfigError("SV runs on barycentric meshes")
        if self.mu <= 0 or self.lam < 0 or self.penalty0 <= 0:
            raise ConfigError("need mu > 0, lambda >= 0, alpha0 > 0")
        if self.stokes_limit and s != "M2":
            raise ConfigError("the Stokes-limit switch only applies to M2")
        return self


@dataclass(frozen=True)
class ForcingSpec:
    """Body force ``f(x, y, mu, lam) -> (2, ...)``.

    Built through :meth:`analytic`, :meth:`gradient` or :meth:`thermo`.
    """

    variant: str
    func: Callable
    potential: Optional[Callable] = None

    def __call__(self, x, y, mu=1.0, lam=1.0):
        return np.asarray(self.func(x, y, mu, lam), dtype=float)

    @classmethod
    def analytic(cls, f):
        """``f(x, y, mu, lam)``."""
        return cls("analytic", f)

    @classmethod
    def gradient(cls, phi, grad_phi):
        return cls("gradient", lambda x, y, mu, lam: grad_phi(x, y), potential=phi)

    @classmethod
    def thermo(cls, theta, grad_theta, alpha_th):
        def f(x, y, mu, lam):
            return -(2 * mu + 3 * lam) * alpha_th * np.asarray(grad_theta(x, y))

        def pot(x, y, mu=1.0, lam=1.0):
            return -(2 * mu + 3 * lam) * alpha_th * np.asarray(theta(x, y))

        return cls("thermo", f, potential=pot)

    @classmethod
    def zero(cls):
        return cls("analytic", lambda x, y, mu, lam: np.zeros((2,) + np.shape(x)))


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    constrained: np.ndarray
    values: np.ndarray
    blocks: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def free(self):
        mask = np.ones(self.n, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)


# ------------------------------------------------------------ raw integrals

def reference_grad_tables(k):
    """S[a, b, i, j] = int_ref d_a p_i d_b p_j."""
    q = pb.triangle_rule(max(2 * k - 2, 1))
    G = pb.eval_scalar_grads(k, q.points)
    return np.einsum("qia,qjb,q->abij", G, G, q.weights)


def grad_integrals(mesh, k):
    """D[t, al, be, i, j] = int_T d_al p_i d_be p_j on every cell."""
    S = reference_grad_tables(k)
    Ji = mesh.inv_jacobians
    return mesh.det_jacobians[:, None, None, None, None] * np.einsum(
        "tag,tbh,abij->tghij", Ji, Ji, S)


def elasticity_raw(mesh, k, mu, lam):
    """Raw element matrices of 2mu(eps, eps) and lam(div, div), (T, 2d, 2d) each."""
    D = grad_integrals(mesh, k)
    T, dim = mesh.n_cells, pb.scalar_dim(k)
    lap = D[:, 0, 0] + D[:, 1, 1]
    Kmu = np.zeros((T, 2, dim, 2, dim))
    Klam = np.zeros((T, 2, dim, 2, dim))
    for c in range(2):
        for d in range(2):
            Kmu[:, c, :, d, :] = mu * ((c == d) * lap + D[:, d, c])
            Klam[:, c, :, d, :] = D[:, c, d]
    return Kmu.reshape(T, 2 * dim, 2 * dim), lam * Klam.reshape(T, 2 * dim, 2 * dim)


def load_raw(mesh, k, forcing, mu, lam, quad_degree=LOAD_QUAD_DEGREE):
    """Raw load vectors int_T f . (e_c p_i), shape (T, 2 dim)."""
    q = pb.triangle_rule(quad_degree)
    X = mesh.to_physical(q.points)
    F = forcing(X[..., 0], X[..., 1], mu, lam)  # (2, T, nq)
    p = pb.eval_scalar_basis(k, q.points)
    b = np.einsum("ctq,qi,q,t->tci", F, p, q.weights, mesh.det_jacobians)
    return b.reshape(mesh.n_cells, -1)


def to_local(C, K):
    """C^T K C with broadcasting over cells."""
    return np.einsum("tra,trs,tsb->tab", np.broadcast_to(C, (K.shape[0],) + C.shape[1:]),
                     K, np.broadcast_to(C, (K.shape[0],) + C.shape[1:]))


def scatter_matrix(rows, cols, Ke, shape):
    """Sum element matrices into CSR; rows/cols are (T, n) DOF tables."""
    R = np.broadcast_to(rows[:, :, None], Ke.shape).ravel()
    Cc = np.broadcast_to(cols[:, None, :], Ke.shape).ravel()
    A = sp.coo_matrix((Ke.ravel(), (R, Cc)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def scatter_vector(rows, be, n):
    b = np.zeros(n)
    np.add.at(b, rows.ravel(), be.ravel())
    return b


# ----------------------------------------------------------- M1 / SV / M2

def assemble_m1(mesh: Mesh, config: SchemeConfig, forcing: ForcingSpec, bc=None,
                space: LagrangeSpace = None) -> LinearSystem:
    """Grad-div elasticity on continuous vector P^k (also SV on barycentric meshes)."""
    V = space or LagrangeSpace(mesh, config.k, vector=True)
    Kmu, Klam = elasticity_raw(mesh, config.k, config.mu, config.lam)
    Ke = to_local(V.C, Kmu + Klam)
    A = scatter_matrix(V.cell_dofs, V.cell_dofs, Ke, (V.ndof, V.ndof))
    be = np.einsum("tra,tr->ta", np.broadcast_to(V.C, (mesh.n_cells,) + V.C.shape[1:]),
                   load_raw(mesh, config.k, forcing, config.mu, config.lam))
    b = scatter_vector(V.cell_dofs, be, V.ndof)
    return LinearSystem(A, b, V.dirichlet_dofs, V.dirichlet_values(bc),
                        blocks={"u": (0, V.ndof), "spaces": {"u": V}})


def divergence_pressure_raw(mesh, ku, kp):
    """B[t, p, (c, i)] = int_T d_c p_i^{ku} p_p^{kp}."""
    q = pb.triangle_rule(ku + kp)
    G = pb.eval_scalar_grads(ku, q.points)
    P = pb.eval_scalar_basis(kp, q.points)
    E = np.einsum("qia,qm,q->ami", G, P, q.weights)
    B = mesh.det_jacobians[:, None, None, None] * np.einsum("tac,ami->tmci", mesh.inv_jacobians, E)
    return B.reshape(mesh.n_cells, P.shape[1], -1)


def assemble_m2(mesh: Mesh, config: SchemeConfig, forcing: ForcingSpec, bc=None,
                stokes_limit=None) -> LinearSystem:
    """Taylor-Hood block system ``[[A, B^T], [B, -M / lam]]``.

    In the Stokes limit the pressure mass block is dropped and the pressure
    mean is fixed with one extra Lagrange multiplier.
    """
    k = config.k
    stokes_limit = config.stokes_limit if stokes_limit is None else stokes_limit
    V = LagrangeSpace(mesh, k, vector=True)
    Q = LagrangeSpace(mesh, k - 1, vector=False, zero_bc=False)
    T = mesh.n_cells
    Kmu, _ = elasticity_raw(mesh, k, config.mu, 0.0)
    A = scatter_matrix(V.cell_dofs, V.cell_dofs, to_local(V.C, Kmu), (V.ndof, V.ndof))
    Bt = divergence_pressure_raw(mesh, k, k - 1)
    Cv = np.broadcast_to(V.C, (T,) + V.C.shape[1:])
    Cq = np.broadcast_to(Q.C, (T,) + Q.C.shape[1:])
    Be = np.einsum("tpa,tpr,trb->tab", Cq, Bt, Cv)
    B = scatter_matrix(Q.cell_dofs, V.cell_dofs, Be, (Q.ndof, V.ndof))
    Me = np.einsum("tpa,t,tpb->tab", Cq, mesh.det_jacobians, Cq)
    M = scatter_matrix(Q.cell_dofs, Q.cell_dofs, Me, (Q.ndof, Q.ndof))
    be = np.einsum("tra,tr->ta", Cv, load_raw(mesh, k, forcing, config.mu, config.lam))
    b_u = scatter_vector(V.cell_dofs, be, V.ndof)
    if stokes_limit:
        pq = pb.triangle_rule(k)
        means = np.einsum("tpa,qp,q,t->ta", Cq, pb.eval_scalar_basis(k - 1, pq.points),
                          pq.weights, mesh.det_jacobians)
        c = scatter_vector(Q.cell_dofs, means, Q.ndof)
        K = sp.bmat([[A, B.T, None], [B, None, sp.csr_matrix(c[:, None])],
                     [None, sp.csr_matrix(c[None, :]), None]], format="csr")
        b = np.concatenate([b_u, np.zeros(Q.ndof + 1)])
    else:
        if config.lam <= 0:
            raise ConfigError("M2 with finite lambda needs lambda > 0")
        K = sp.bmat([[A, B.T], [B, -M / config.lam]], format="csr")
        b = np.concatenate([b_u, np.zeros(Q.ndof)])
    K.sum_duplicates()
    K.sort_indices()
    return LinearSystem(K, b, V.dirichlet_dofs, V.dirichlet_values(bc),
                        blocks={"u": (0, V.ndof), "p": (V.ndof, V.ndof + Q.ndof),
                                "A": A, "B": B, "M": M, "spaces": {"u": V, "p": Q}})


# -------------------------------------------------------------------- HDG

def hdg_element_matrices(mesh, V: BDMSpace, k, mu, alpha, consistency=True,
                         penalty=None, edge_degree=None):
    """Element matrices of the mu-part of the HDG form in raw+facet layout.

    Layout per cell: ``nraw`` raw vector coefficients followed by the ``3k``
    facet coefficients (local edge major). ``penalty`` overrides the
    coefficient ``mu * alpha`` in front of ``h_F^-1 (Pi_M jump, Pi_M jump)``.
    Returns (volume, edge) parts, each (T, nraw + 3k, nraw + 3k).
    """
    T, dim = mesh.n_cells, pb.scalar_dim(k)
    nraw = 2 * dim
    n = nraw + 3 * k
    eq = pb.edge_rule(edge_degree or 2 * k + 2)
    ref = edge_ref_points(eq.points)  # (3, nq, 2)
    P = pb.eval_scalar_basis(k, ref)  # (3, nq, dim)
    Gp = np.einsum("tad,eqia->teqid", mesh.inv_jacobians, pb.eval_scalar_grads(k, ref))
    nrm = mesh.cell_normals  # (T, 3, 2)
    tan = mesh.facet_tangent[mesh.cell_facets]  # (T, 3, 2)
    L = pb.eval_edge_basis(k - 1, facet_param(mesh, eq.points))  # (T, 3, nq, k)
    nq = len(eq.weights)

    # t . (2 mu eps(e_c p_i)) n = mu (t_c dn p_i + n_c dt p_i)
    dn = np.einsum("teqid,ted->teqi", Gp, nrm)
    dt = np.einsum("teqid,ted->teqi", Gp, tan)
    TR = np.zeros((T, 3, nq, n))
    TR[..., :nraw] = mu * (tan[:, :, None, :, None] * dn[:, :, :, None, :]
                           + nrm[:, :, None, :, None] * dt[:, :, :, None, :]).reshape(T, 3, nq, nraw)
    # tangential jump (u_T . t) - u_F
    J = np.zeros((T, 3, nq, n))
    J[..., :nraw] = (tan[:, :, None, :, None] * P[None, :, :, None, :]).reshape(T, 3, nq, nraw)
    for e in range(3):
        J[:, e, :, nraw + e * k: nraw + (e + 1) * k] = -L[:, e]
    hF = mesh.cell_edge_lengths  # (T, 3)
    w = eq.weights[None, None, :] * hF[:, :, None]  # physical edge weights
    Ke = np.zeros((T, n, n))
    if consistency:
        C1 = np.einsum("teqa,teqb,teq->tab", TR, J, w)
        Ke -= C1 + C1.transpose(0, 2, 1)
    coef = mu * alpha if penalty is None else penalty
    MJ = np.einsum("teqa,teqm,q->tema", J, L, eq.weights)  # |F|^-1 int J l_m
    Ke += coef * np.einsum("tema,temb,te->tab", MJ, MJ, np.ones_like(hF))
    # the h_F^-1 |F| factors cancel on each facet: (1/h_F) int_F Pi a Pi b = sum_m M_m(a) M_m(b)
    Kmu, Klam_unit = elasticity_raw(mesh, k, mu, 1.0)
    Kv = np.zeros((T, n, n))
    Kv[:, :nraw, :nraw] = Kmu
    Kl = np.zeros((T, n, n))
    Kl[:, :nraw, :nraw] = Klam_unit
    return Kv + Ke, Kl


def _hdg_local_map(mesh, V, M):
    T = mesh.n_cells
    nloc = V.nloc + 3 * V.k
    nraw = V.nraw
    Cfull = np.zeros((T, nraw + 3 * V.k, nloc))
    Cfull[:, :nraw, :V.nloc] = V.C
    Cfull[:, nraw:, V.nloc:] = np.eye(3 * V.k)
    dofs = np.hstack([V.cell_dofs, V.ndof + M.cell_dofs])
    return Cfull, dofs


def hdg_spaces(mesh, config):
    relaxed = config.scheme.upper() in ("S2", "S3")
    V = BDMSpace(mesh, config.k, relaxed=relaxed)
    M = FacetSpace(mesh, config.k)
    return V, M


def assemble_hdg_parts(mesh, V, M, mu, alpha, consistency=True, penalty=None):
    """Global (A_mu, A_div) on the same sparsity pattern; a_h = A_mu + lam * A_div."""
    Kmu, Kdiv = hdg_element_matrices(mesh, V, V.k, mu, alpha, consistency, penalty)
    Cfull, dofs = _hdg_local_map(mesh, V, M)
    n = V.ndof + M.ndof
    Amu = scatter_matrix(dofs, dofs, to_local(Cfull, Kmu), (n, n))
    Adiv = scatter_matrix(dofs, dofs, to_local(Cfull, Kdiv), (n, n))
    return Amu, Adiv


def hdg_load(mesh, V: BDMSpace, M, config, forcing, reconstructed=False):
    T = mesh.n_cells
    if reconstructed:
        return assemble_rhs_reconstructed(mesh, config, forcing, V, M)
    braw = load_raw(mesh, V.k, forcing, config.mu, config.lam)
    be = np.einsum("tra,tr->ta", V.C, braw)
    bV = scatter_vector(V.cell_dofs, be, V.ndof)
    return np.concatenate([bV, np.zeros(M.ndof)])


def assemble_rhs_reconstructed(mesh, config, forcing, V: BDMSpace = None, M=None):
    """Load ``f(Pi_V v)`` for relaxed test functions: R^T applied to the BDM load."""
    V = V or BDMSpace(mesh, config.k, relaxed=True)
    M = M or FacetSpace(mesh, config.k)
    R, full = V.reconstruction_matrix
    braw = load_raw(mesh, V.k, forcing, config.mu, config.lam)
    be = np.einsum("tra,tr->ta", full.C, braw)
    b_full = scatter_vector(full.cell_dofs, be, full.ndof)
    return np.concatenate([R.T @ b_full, np.zeros(M.ndof)])


def coercivity_check(Amu, free, n_samples=50, seed=0):
    """Smallest Rayleigh quotient of ``Amu`` over random free-DOF vectors."""
    rng = np.random.default_rng(seed)
    A = Amu[free][:, free]
    X = rng.standard_normal((len(free), n_samples))
    q = np.einsum("ij,ij->j", X, A @ X) / np.einsum("ij,ij->j", X, X)
    return float(q.min())


def assemble_hdg(mesh: Mesh, config: SchemeConfig, forcing: ForcingSpec, bc=None,
                 check_coercivity=True) -> LinearSystem:
    """HDG system for S1 (BDM), S2 (relaxed BDM) and S3 (relaxed, reconstructed load)."""
    V, M = hdg_spaces(mesh, config)
    Amu, Adiv = assemble_hdg_parts(mesh, V, M, config.mu, config.alpha)
    A = (Amu + config.lam * Adiv).tocsr()
    A.sort_indices()
    b = hdg_load(mesh, V, M, config, forcing, reconstructed=config.scheme.upper() == "S3")
    constrained = np.concatenate([V.dirichlet_dofs, V.ndof + M.dirichlet_dofs])
    values = np.concatenate([V.dirichlet_values(bc) if bc is not None
                             else np.zeros(len(V.dirichlet_dofs)), M.dirichlet_values(bc)])
    system = LinearSystem(A, b, constrained, values,
                          blocks={"u_T": (0, V.ndof), "u_F": (V.ndof, V.ndof + M.ndof),
                                  "A_mu": Amu, "A_div": Adiv,
                                  "spaces": {"u_T": V, "u_F": M}})
    if check_coercivity:
        qmin = coercivity_check(Amu, system.free)
        system.blocks["min_rayleigh"] = qmin
        if qmin <= 0:
            warnings.warn(f"a_h^mu has Rayleigh quotient {qmin:.3e} <= 0; increase alpha0",
                          CoercivityWarning, stacklevel=2)
    return system


# -------------------------------------------------------------- Dirichlet

def apply_dirichlet(system: LinearSystem):
    """Symmetric elimination of constrained DOFs.

    Returns ``(A_ff, b_f, free)``; expand a solution of the reduced system
    with :func:`expand_solution`.
    """
    free = system.free
    c = system.constrained
    A = system.A
    b_f = system.b[free] - A[free][:, c] @ system.values
    A_ff = A[free][:, free].tocsr()
    A_ff.sort_indices()
    return A_ff, b_f, free


def expand_solution(system: LinearSystem, x_free, free=None):
    free = system.free if free is None else free
    x = np.zeros(system.n, dtype=np.result_type(x_free, float))
    x[free] = x_free
    x[system.constrained] = system.values
    return x
