"""Discrete spaces, DOF maps, fields and projection operators.

Every element-based space describes its local shape functions through a
per-cell matrix ``C`` of shape (T, nraw, nloc) that maps local DOF values to
coefficients in the *raw* basis: the orthonormal reference basis of P^k
(see :mod:`.polybasis`) pulled back affinely to each cell, times the
Cartesian unit vectors for vector spaces. Raw index ``c * dim + i`` stands
for ``e_c * p_i``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import polybasis as pb
from .mesh import Mesh

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class UnsupportedOrder(ValueError):
    pass


class SingularLocalSystem(np.linalg.LinAlgError):
    pass


class WrongSpace(TypeError):
    pass


def edge_ref_points(tau):
    """Reference coordinates of local-edge parameters; shape (3, nq, 2)."""
    tau = np.asarray(tau, dtype=float)
    a = REF_VERTICES
    b = np.roll(REF_VERTICES, -1, axis=0)
    return a[:, None, :] + tau[None, :, None] * (b - a)[:, None, :]


def facet_param(mesh, tau):
    """Global facet parameter s for each (cell, local edge, tau); shape (T, 3, nq)."""
    tau = np.asarray(tau, dtype=float)
    aligned = mesh.cell_edge_aligned[:, :, None]
    return np.where(aligned, tau[None, None, :], 1.0 - tau[None, None, :])


def physical_grads(mesh, ref_grads):
    """Map reference gradients (..., 2) to every cell: (T, ..., 2)."""
    return np.einsum("tad,...a->t...d", mesh.inv_jacobians, ref_grads)


def nedelec_reference(k, points):
    """Basis of [P^{k-2}]^2 + P^{k-2} x^perp on the reference triangle.

    Shape (..., (k - 1)(k + 1), 2); empty for k < 2.
    """
    points = np.asarray(points, dtype=float)
    if k < 2:
        return np.zeros(points.shape[:-1] + (0, 2))
    q = pb.eval_scalar_basis(k - 2, points)
    z = np.zeros_like(q)
    parts = [np.stack([q, z], axis=-1), np.stack([z, q], axis=-1)]
    xc = points[..., 0] - 1.0 / 3.0
    yc = points[..., 1] - 1.0 / 3.0
    d = k - 2
    hom = np.stack([xc ** (d - b) * yc**b for b in range(d + 1)], axis=-1)
    parts.append(np.stack([-yc[..., None] * hom, xc[..., None] * hom], axis=-1))
    return np.concatenate(parts, axis=-2)


class Space:
    """Base class of element-based spaces."""

    kind = ""
    ncomp = 1

    def __init__(self, mesh: Mesh, k: int, raw_degree: int):
        self.mesh = mesh
        self.k = k
        self.raw_degree = raw_degree
        self.dim = pb.scalar_dim(raw_degree)

    @property
    def nraw(self):
        return self.ncomp * self.dim

    @property
    def nloc(self):
        return self.cell_dofs.shape[1]

    @cached_property
    def free_dofs(self):
        mask = np.ones(self.ndof, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @property
    def n_free(self):
        return len(self.free_dofs)

    def raw_coefficients(self, coeffs):
        """Per-cell raw coefficients, shape (T, nraw)."""
        local = np.asarray(coeffs)[self.cell_dofs]
        return np.einsum("trl,tl->tr", np.broadcast_to(
            self.C, (self.mesh.n_cells, self.nraw, self.nloc)), local)

    def zero(self):
        return FieldFunction(self, np.zeros(self.ndof))

    def __repr__(self):
        return f"{type(self).__name__}(k={self.k}, ndof={self.ndof})"


def raw_values(ncomp, degree, ref_points):
    """Raw basis values at reference points: (..., nraw, ncomp)."""
    p = pb.eval_scalar_basis(degree, ref_points)
    if ncomp == 1:
        return p[..., None]
    dim = p.shape[-1]
    out = np.zeros(p.shape[:-1] + (2 * dim, 2))
    out[..., :dim, 0] = p
    out[..., dim:, 1] = p
    return out


class LagrangeSpace(Space):
    """Continuous P^k, scalar or vector valued."""

    def __init__(self, mesh: Mesh, k: int, vector: bool = True, zero_bc: bool = True):
        if k < 1:
            raise UnsupportedOrder("Lagrange spaces need k >= 1")
        super().__init__(mesh, k, k)
        self.vector = vector
        self.ncomp = 2 if vector else 1
        self.kind = "LagrangeVec" if vector else "LagrangeScalar"
        self.zero_bc = zero_bc
        V, E, T = mesh.n_vertices, mesh.n_facets, mesh.n_cells
        ne, ni = k - 1, (k - 1) * (k - 2) // 2
        self.n_nodes = V + ne * E + ni * T
        nodes = [mesh.triangles]
        if ne:
            j = np.arange(ne)
            fac = mesh.cell_facets[:, :, None]
            jj = np.where(mesh.cell_edge_aligned[:, :, None], j, ne - 1 - j)
            nodes.append((V + fac * ne + jj).reshape(T, -1))
        if ni:
            nodes.append(V + ne * E + np.arange(T)[:, None] * ni + np.arange(ni))
        self.cell_nodes = np.hstack(nodes)
        if vector:
            self.cell_dofs = np.hstack([self.cell_nodes, self.cell_nodes + self.n_nodes])
        else:
            self.cell_dofs = self.cell_nodes
        self.ndof = self.ncomp * self.n_nodes
        ref_nodes = pb.lattice_points(k)
        Cs = np.linalg.inv(pb.eval_scalar_basis(k, ref_nodes))
        C = np.kron(np.eye(self.ncomp), Cs)
        self.C = C[None]

    @cached_property
    def node_coordinates(self):
        X = np.zeros((self.n_nodes, 2))
        phys = self.mesh.to_physical(pb.lattice_points(self.k))
        X[self.cell_nodes.ravel()] = phys.reshape(-1, 2)
        return X

    @cached_property
    def boundary_nodes(self):
        m = self.mesh
        bf = np.flatnonzero(m.boundary_facets)
        nodes = [np.unique(m.facets[bf])]
        ne = self.k - 1
        if ne:
            nodes.append((m.n_vertices + bf[:, None] * ne + np.arange(ne)).ravel())
        return np.unique(np.concatenate(nodes))

    @cached_property
    def dirichlet_dofs(self):
        if not self.zero_bc:
            return np.zeros(0, dtype=np.int64)
        b = self.boundary_nodes
        if self.vector:
            return np.concatenate([b, b + self.n_nodes])
        return b

    def dirichlet_values(self, g):
        """Nodal interpolation of ``g`` at the constrained DOFs."""
        if g is None:
            return np.zeros(len(self.dirichlet_dofs))
        X = self.node_coordinates[self.boundary_nodes]
        vals = np.asarray(g(X[:, 0], X[:, 1]), dtype=float)
        if self.vector:
            return np.concatenate([vals[0], vals[1]])
        return vals

    def interpolate(self, g):
        X = self.node_coordinates
        vals = np.asarray(g(X[:, 0], X[:, 1]), dtype=float)
        return FieldFunction(self, vals.ravel() if self.vector else vals)


class BrokenSpace(Space):
    """Discontinuous scalar P^k with an L2-orthonormal basis on every cell."""

    kind = "BrokenScalar"

    def __init__(self, mesh: Mesh, k: int):
        if k < 0:
            raise UnsupportedOrder(k)
        super().__init__(mesh, k, k)
        T = mesh.n_cells
        self.cell_dofs = np.arange(T * self.dim).reshape(T, self.dim)
        self.ndof = T * self.dim
        self.C = np.eye(self.dim)[None] / np.sqrt(mesh.det_jacobians)[:, None, None]
        self.dirichlet_dofs = np.zeros(0, dtype=np.int64)


class BDMSpace(Space):
    """BDM_k, or its relaxed variant where the top normal moment is per side.

    Facet DOFs are ``|F|^-1 int_F (v . n_F) l_i ds`` for the orthonormal
    Legendre polynomials ``l_i``, i = 0..k, in the global facet parameter;
    interior DOFs are moments against the Nedelec space N^{k-2}. In the
    relaxed space the degree-k moment on interior facets is duplicated, one
    copy per adjacent cell; on boundary facets it stays single.
    """

    ncomp = 2

    def __init__(self, mesh: Mesh, k: int, relaxed: bool = False, zero_bc: bool = True):
        if k < 1 or (relaxed and k < 2):
            raise UnsupportedOrder(f"{'relaxed ' if relaxed else ''}BDM needs k >= {2 if relaxed else 1}")
        super().__init__(mesh, k, k)
        self.relaxed = relaxed
        self.kind = "BDMRelaxed" if relaxed else "BDM"
        self.zero_bc = zero_bc
        T, E = mesh.n_cells, mesh.n_facets
        self.n_facet_moments = k + 1
        self.n_interior = (k + 1) * (k - 1)
        nf = self.n_facet_moments
        bnd = mesh.boundary_facets
        if not relaxed:
            facet_dofs = np.arange(E * nf).reshape(E, nf)
            cell_facet_dofs = facet_dofs[mesh.cell_facets]  # (T, 3, nf)
            start = E * nf
            bdofs = facet_dofs[bnd].ravel()
        else:
            low = np.arange(E * k).reshape(E, k)
            top = -np.ones((E, 2), dtype=np.int64)
            n_top = np.where(bnd, 1, 2)
            offsets = E * k + np.concatenate([[0], np.cumsum(n_top)[:-1]])
            top[:, 0] = offsets
            top[~bnd, 1] = offsets[~bnd] + 1
            top[bnd, 1] = offsets[bnd]
            self.top_dofs = top
            start = E * k + int(n_top.sum())
            side = np.zeros((T, 3), dtype=np.int64)
            fc = mesh.facet_cells
            side[fc[~bnd, 1], mesh.facet_local[~bnd, 1]] = 1
            cell_top = top[mesh.cell_facets, side]
            cell_facet_dofs = np.concatenate([low[mesh.cell_facets], cell_top[..., None]], axis=-1)
            bdofs = np.concatenate([low[bnd].ravel(), top[bnd, 0]])
        interior = start + np.arange(T * self.n_interior).reshape(T, self.n_interior)
        self.cell_dofs = np.hstack([cell_facet_dofs.reshape(T, -1), interior])
        self.ndof = start + T * self.n_interior
        self.n_facet_dofs = start
        self.boundary_dofs = np.sort(bdofs)
        self.dirichlet_dofs = self.boundary_dofs if zero_bc else np.zeros(0, dtype=np.int64)
        self.C = self._dual_basis()

    # quadrature used by the DOF functionals: exact for degree 2k
    @cached_property
    def _edge_quad(self):
        return pb.edge_rule(2 * self.k + 2)

    @cached_property
    def _cell_quad(self):
        return pb.triangle_rule(2 * self.k)

    def facet_moment_weights(self, eq=None):
        """Weights ``W[t, e, q, i] = w_q l_i(s_q)`` on the cell edges."""
        eq = eq or self._edge_quad
        s = facet_param(self.mesh, eq.points)
        return eq.weights[None, None, :, None] * pb.eval_edge_basis(self.k, s)

    def interior_test_functions(self, cq=None):
        """Physical Nedelec test functions at cell quadrature points, (T, nq, nint, 2)."""
        m = self.mesh
        cq = cq or self._cell_quad
        psi = nedelec_reference(self.k, cq.points)
        scale = np.sqrt(m.det_jacobians)[:, None, None, None]
        return scale * np.einsum("tad,qma->tqmd", m.inv_jacobians, psi)

    def dofs_of_cellwise(self, edge_traces, cell_values, eq=None, cq=None):
        """Local DOF values from element-side data.

        ``edge_traces``: (T, 3, nqe, 2) vector values on the cell edges at the
        points of ``eq``; ``cell_values``: (T, nq, 2) at the points of ``cq``.
        Returns facet moments (T, 3, k+1) and interior moments (T, nint).
        """
        m = self.mesh
        eq = eq or self._edge_quad
        cq = cq or self._cell_quad
        nF = m.facet_normal[m.cell_facets]  # (T, 3, 2)
        vn = np.einsum("teqc,tec->teq", edge_traces, nF)
        fm = np.einsum("teq,teqi->tei", vn, self.facet_moment_weights(eq))
        w = 2.0 * cq.weights
        im = np.einsum("tqc,tqmc,q->tm", cell_values, self.interior_test_functions(cq), w)
        return fm, im

    def _dual_basis(self):
        m = self.mesh
        T, k, dim = m.n_cells, self.k, self.dim
        eq = self._edge_quad
        ref_e = edge_ref_points(eq.points)
        raw_e = raw_values(2, k, ref_e)  # (3, nqe, nraw, 2)
        traces = np.broadcast_to(raw_e[None], (T,) + raw_e.shape)
        raw_c = raw_values(2, k, self._cell_quad.points)
        cells = np.broadcast_to(raw_c[None], (T,) + raw_c.shape)
        # functional applied to each raw function: move raw axis out
        nF = m.facet_normal[m.cell_facets]
        vn = np.einsum("teqrc,tec->teqr", traces, nF)
        fm = np.einsum("teqr,teqi->teir", vn, self.facet_moment_weights())
        w = 2.0 * self._cell_quad.weights
        im = np.einsum("tqrc,tqmc,q->tmr", cells, self.interior_test_functions(), w)
        D = np.concatenate([fm.reshape(T, -1, 2 * dim), im], axis=1)
        cond = np.linalg.cond(D)
        if not np.all(np.isfinite(cond)) or cond.max() > 1e12:
            raise SingularLocalSystem(f"BDM dual matrix condition number {cond.max():.3e}")
        return np.linalg.inv(D)

    def dirichlet_values(self, g):
        """Boundary normal moments of ``g . n_F`` at the constrained DOFs."""
        vals = self.facet_normal_moments(g)
        m = self.mesh
        bf = np.flatnonzero(m.boundary_facets)
        if not self.relaxed:
            out = np.zeros(self.ndof)
            out[(bf[:, None] * (self.k + 1) + np.arange(self.k + 1)).ravel()] = vals[bf].ravel()
        else:
            out = np.zeros(self.ndof)
            out[(bf[:, None] * self.k + np.arange(self.k)).ravel()] = vals[bf, :self.k].ravel()
            out[self.top_dofs[bf, 0]] = vals[bf, self.k]
        return out[self.dirichlet_dofs]

    def facet_normal_moments(self, g, facets=None):
        """``|F|^-1 int_F (g . n_F) l_i ds`` for a callable g; shape (E, k+1)."""
        m = self.mesh
        f = np.arange(m.n_facets) if facets is None else np.asarray(facets)
        eq = self._edge_quad
        p = m.vertices[m.facets[f]]
        X = p[:, None, 0] + eq.points[None, :, None] * (p[:, 1] - p[:, 0])[:, None]
        G = np.asarray(g(X[..., 0], X[..., 1]), dtype=float)  # (2, E, nq)
        gn = np.einsum("cfq,fc->fq", G, m.facet_normal[f])
        L = pb.eval_edge_basis(self.k, eq.points)
        return np.einsum("fq,q,qi->fi", gn, eq.weights, L)

    @cached_property
    def sharing_matrix(self):
        """Sparse map BDM DOFs -> relaxed DOFs (relaxed only): both sides copy the top moment."""
        if not self.relaxed:
            raise WrongSpace("sharing_matrix is defined on the relaxed space")
        full = BDMSpace(self.mesh, self.k, relaxed=False, zero_bc=self.zero_bc)
        rows = self.cell_dofs.ravel()
        cols = full.cell_dofs.ravel()
        P = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.ndof, full.ndof)).tocsr()
        P.data[:] = 1.0  # duplicates collapse to plain copies
        return P, full

    @cached_property
    def reconstruction_matrix(self):
        """Sparse map relaxed DOFs -> BDM DOFs averaging the duplicated top moments."""
        P, full = self.sharing_matrix
        R = P.T.tocsr().astype(float)
        counts = np.asarray(R.sum(axis=1)).ravel()
        R = sp.diags(1.0 / counts) @ R
        return R.tocsr(), full


class FacetSpace:
    """Tangential facet field ``w(s) t_F`` with ``w`` in P^{k-1}(F)."""

    kind = "FacetTangential"

    def __init__(self, mesh: Mesh, k: int, zero_bc: bool = True):
        if k < 1:
            raise UnsupportedOrder("facet space needs k >= 1")
        self.mesh = mesh
        self.k = k
        self.zero_bc = zero_bc
        E = mesh.n_facets
        self.facet_dofs = np.arange(E * k).reshape(E, k)
        self.cell_dofs = self.facet_dofs[mesh.cell_facets].reshape(mesh.n_cells, 3 * k)
        self.ndof = E * k
        bf = np.flatnonzero(mesh.boundary_facets)
        self.dirichlet_dofs = self.facet_dofs[bf].ravel() if zero_bc else np.zeros(0, dtype=np.int64)

    @cached_property
    def free_dofs(self):
        mask = np.ones(self.ndof, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @property
    def n_free(self):
        return len(self.free_dofs)

    def dirichlet_values(self, g):
        if g is None:
            return np.zeros(len(self.dirichlet_dofs))
        bf = np.flatnonzero(self.mesh.boundary_facets)
        coef = project_facet_M(self.mesh, g, self.k, facets=bf)
        t = self.mesh.facet_tangent[bf]
        return np.einsum("fic,fc->fi", coef, t).ravel()

    def interpolate(self, g):
        """Pi_M of the tangential trace of ``g`` on every facet."""
        coef = project_facet_M(self.mesh, g, self.k)
        return np.einsum("fic,fc->fi", coef, self.mesh.facet_tangent).ravel()

    def __repr__(self):
        return f"FacetSpace(k={self.k}, ndof={self.ndof})"


@dataclass
class FieldFunction:
    """Coefficient vector on an element-based space."""

    space: Space
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError("coefficient vector does not match the space")

    @cached_property
    def raw(self):
        return self.space.raw_coefficients(self.coefficients)

    def _raw_split(self):
        s = self.space
        return self.raw.reshape(-1, s.ncomp, s.dim)

    def cell_values(self, ref_points):
        """Values on all cells at reference points (..., 2) -> (T, ..., ncomp)."""
        s = self.space
        p = pb.eval_scalar_basis(s.raw_degree, ref_points)
        return np.einsum("tci,...i->t...c", self._raw_split(), p)

    def cell_gradients(self, ref_points):
        """(T, ..., ncomp, 2)."""
        s = self.space
        g = physical_grads(s.mesh, pb.eval_scalar_grads(s.raw_degree, ref_points))
        return np.einsum("tci,t...id->t...cd", self._raw_split(), g)

    def cell_divergence(self, ref_points):
        g = self.cell_gradients(ref_points)
        return g[..., 0, 0] + g[..., 1, 1]

    def __call__(self, x, y):
        """Point evaluation by locating the containing cell (slow; for tests)."""
        m = self.space.mesh
        pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
        flat = pts.reshape(-1, 2)
        out = np.zeros((len(flat), self.space.ncomp))
        x0 = m.vertices[m.triangles[:, 0]]
        for n, X in enumerate(flat):
            ref = np.einsum("tij,tj->ti", m.inv_jacobians, X - x0)
            inside = (ref[:, 0] >= -1e-12) & (ref[:, 1] >= -1e-12) & (ref.sum(1) <= 1 + 1e-12)
            t = int(np.flatnonzero(inside)[0])
            p = pb.eval_scalar_basis(self.space.raw_degree, ref[t])
            out[n] = self._raw_split()[t] @ p
        out = out.reshape(pts.shape[:-1] + (self.space.ncomp,))
        return np.moveaxis(out, -1, 0) if self.space.ncomp > 1 else out[..., 0]


def cell_values_of(v, mesh, ref_points):
    """Evaluate a callable g(x, y) -> (ncomp, ...) or a FieldFunction on all cells.

    Returns (T, ..., ncomp) for vector data, (T, ...) for scalar data.
    """
    if isinstance(v, FieldFunction):
        out = v.cell_values(ref_points)
        return out if v.space.ncomp > 1 else out[..., 0]
    if hasattr(v, "cell_values"):
        return v.cell_values(ref_points)
    X = mesh.to_physical(np.asarray(ref_points, float))
    G = np.asarray(v(X[..., 0], X[..., 1]), dtype=float)
    if G.ndim == X.ndim:  # vector: leading component axis
        return np.moveaxis(G, 0, -1)
    return G


@dataclass
class CellFunction:
    """Element-wise function given by its values on cells at reference points."""

    evaluate: object

    def cell_values(self, ref_points):
        return self.evaluate(ref_points)


def divergence_of(field: FieldFunction) -> CellFunction:
    return CellFunction(field.cell_divergence)


# ---------------------------------------------------------------- builders

def build_lagrange(mesh, k, vector=True, zero_bc=True):
    return LagrangeSpace(mesh, k, vector=vector, zero_bc=zero_bc)


def build_bdm(mesh, k, zero_bc=True):
    return BDMSpace(mesh, k, relaxed=False, zero_bc=zero_bc)


def build_bdm_relaxed(mesh, k, zero_bc=True):
    return BDMSpace(mesh, k, relaxed=True, zero_bc=zero_bc)


def build_facet_tangential(mesh, k, zero_bc=True):
    return FacetSpace(mesh, k, zero_bc=zero_bc)


def build_broken(mesh, k):
    return BrokenSpace(mesh, k)


# ------------------------------------------------------------- projections

def _facet_points(mesh, facets, s):
    p = mesh.vertices[mesh.facets[facets]]
    return p[:, None, 0] + s[None, :, None] * (p[:, 1] - p[:, 0])[:, None]


def project_facet_M(mesh, g, k, facets=None, quad_degree=None):
    """L2 projection of a vector trace onto [P^{k-1}(F)]^2.

    Returns coefficients (nf, k, 2) in the orthonormal Legendre basis of the
    global facet parameter.
    """
    f = np.arange(mesh.n_facets) if facets is None else np.atleast_1d(facets)
    eq = pb.edge_rule(quad_degree or min(2 * k + 8, pb.MAX_DEGREE))
    X = _facet_points(mesh, f, eq.points)
    G = np.asarray(g(X[..., 0], X[..., 1]), dtype=float)  # (2, nf, nq)
    L = pb.eval_edge_basis(k - 1, eq.points)
    return np.einsum("cfq,q,qi->fic", G, eq.weights, L)


def project_facet_Fkm1(mesh, w, k, facets=None, quad_degree=None):
    """L2 projection of a scalar facet function onto P^{k-1}(F); (nf, k)."""
    f = np.arange(mesh.n_facets) if facets is None else np.atleast_1d(facets)
    eq = pb.edge_rule(quad_degree or min(2 * k + 8, pb.MAX_DEGREE))
    X = _facet_points(mesh, f, eq.points)
    W = np.asarray(w(X[..., 0], X[..., 1]), dtype=float)
    L = pb.eval_edge_basis(k - 1, eq.points)
    return np.einsum("fq,q,qi->fi", W, eq.weights, L)


def evaluate_facet_poly(coef, s):
    """Evaluate facet coefficients (..., k[, 2]) from the projections at parameters s."""
    k = coef.shape[1] if coef.ndim >= 2 else coef.shape[0]
    L = pb.eval_edge_basis(k - 1, s)
    if coef.ndim == 3:
        return np.einsum("fic,qi->fqc", coef, L)
    return np.einsum("fi,qi->fq", coef, L)


def project_broken_Q(mesh, w, k, quad_degree=14):
    """Element-wise L2 projection onto P^{k-1}; returns a BrokenSpace field."""
    Q = BrokenSpace(mesh, k - 1)
    quad = pb.triangle_rule(quad_degree)
    vals = cell_values_of(w, mesh, quad.points)  # (T, nq)
    p = pb.eval_scalar_basis(k - 1, quad.points)
    coef = np.einsum("tq,qi,q->ti", vals, p, quad.weights) * np.sqrt(mesh.det_jacobians)[:, None]
    return FieldFunction(Q, coef.ravel())


def interpolate_bdm(space: BDMSpace, v, quad_degree=None) -> FieldFunction:
    """BDM interpolant with averaged normal traces on interior facets.

    ``v`` is a callable g(x, y) -> (2, ...) or a vector FieldFunction (which
    may be discontinuous across facets). Facet moments use the average of
    both one-sided normal traces; boundary facets use the single trace.
    """
    m = space.mesh
    target = space if not space.relaxed else BDMSpace(m, space.k, relaxed=False,
                                                         zero_bc=space.zero_bc)
    if quad_degree is None:
        quad_degree = 2 * space.k + 2 if isinstance(v, FieldFunction) else 14
    eq = pb.edge_rule(quad_degree)
    cq = pb.triangle_rule(quad_degree)
    traces = cell_values_of(v, m, edge_ref_points(eq.points))  # (T, 3, nq, 2)
    cells = cell_values_of(v, m, cq.points)
    fm, im = target.dofs_of_cellwise(traces, cells, eq, cq)
    nf = target.n_facet_moments
    acc = np.zeros((m.n_facets, nf))
    np.add.at(acc, m.cell_facets.ravel(), fm.reshape(-1, nf))
    cnt = np.where(m.boundary_facets, 1.0, 2.0)
    facet_vals = acc / cnt[:, None]
    coeffs = np.zeros(target.ndof)
    coeffs[:m.n_facets * nf] = facet_vals.ravel()
    coeffs[target.n_facet_dofs:] = im.ravel()
    return FieldFunction(target, coeffs)


def reconstruct_relaxed(v: FieldFunction) -> FieldFunction:
    """Average the duplicated top normal moments: relaxed BDM -> BDM."""
    s = v.space
    if not (isinstance(s, BDMSpace) and s.relaxed):
        raise WrongSpace("reconstruct_relaxed expects a relaxed BDM field")
    R, full = s.reconstruction_matrix
    return FieldFunction(full, R @ v.coefficients)


def project_rigid_motion(mesh, v, quad_degree=14):
    """Element-wise projection onto rigid motions.

    Returns (T, 3) with rows ``(a1, a2, b)`` meaning
    ``a + b * (-(y - c_y), x - c_x)`` where ``c`` is the cell centroid. The
    mean curl is computed as the boundary integral of the tangential trace.
    """
    quad = pb.triangle_rule(quad_degree)
    vals = cell_values_of(v, mesh, quad.points)  # (T, nq, 2)
    mean = 2.0 * np.einsum("tqc,q->tc", vals, quad.weights)
    eq = pb.edge_rule(quad_degree)
    tr = cell_values_of(v, mesh, edge_ref_points(eq.points))  # (T, 3, nq, 2)
    n = mesh.cell_normals
    tang = np.stack([-n[..., 1], n[..., 0]], axis=-1)
    circ = np.einsum("teqc,tec,q,te->t", tr, tang, eq.weights, mesh.cell_edge_lengths)
    b = circ / mesh.areas / 2.0
    return np.column_stack([mean, b])


def rigid_motion_values(mesh, rm, ref_points):
    """Evaluate element rigid motions (T, 3) at reference points -> (T, ..., 2)."""
    X = mesh.to_physical(np.asarray(ref_points, float))
    c = mesh.centroids.reshape((-1,) + (1,) * (X.ndim - 2) + (2,))
    d = X - c
    a = rm[:, :2].reshape((-1,) + (1,) * (X.ndim - 2) + (2,))
    b = rm[:, 2].reshape((-1,) + (1,) * (X.ndim - 2))
    return a + b[..., None] * np.stack([-d[..., 1], d[..., 0]], axis=-1)
