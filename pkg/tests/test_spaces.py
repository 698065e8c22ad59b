import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import facet_traces, normal_jump_moments, smooth_div, smooth_field
from hdg_elasticity import polybasis as pb
from hdg_elasticity.mesh import build_mesh, single_triangle_mesh
from hdg_elasticity.spaces import (BDMSpace, BrokenSpace, FacetSpace, FieldFunction, LagrangeSpace,
                                   UnsupportedOrder, WrongSpace, divergence_of, interpolate_bdm,
                                   project_broken_Q, project_facet_M, project_rigid_motion,
                                   reconstruct_relaxed, rigid_motion_values)


def random_field(space, seed=0):
    return FieldFunction(space, np.random.default_rng(seed).standard_normal(space.ndof))


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("flavor", ["uniform", "bary"])
def test_bdm_normal_continuity(k, flavor):
    m = build_mesh(0, flavor)
    V = BDMSpace(m, k, zero_bc=False)
    mom = normal_jump_moments(random_field(V), k)
    assert np.abs(mom).max() <= 1e-12 * max(1.0, np.abs(V.C).max())


@pytest.mark.parametrize("k", [2, 3])
def test_relaxed_space_violates_only_top_moment(k, bary0):
    V = BDMSpace(bary0, k, relaxed=True, zero_bc=False)
    mom = normal_jump_moments(random_field(V, 1), k)
    assert np.abs(mom[:, :k]).max() <= 1e-11
    assert np.abs(mom[:, k]).min() > 1e-3


@pytest.mark.parametrize("k,relaxed,expected", [(1, False, 304), (2, False, 744), (3, False, 1376),
                                                 (2, True, 880), (3, True, 1512)])
def test_bdm_dimensions(k, relaxed, expected, bary0):
    V = BDMSpace(bary0, k, relaxed=relaxed, zero_bc=False)
    assert V.ndof == expected
    E, Eb, T = bary0.n_facets, bary0.boundary_facets.sum(), bary0.n_cells
    top = (2 * E - Eb) if relaxed else E
    assert V.ndof == (k * E if relaxed else (k + 1) * E) + (top if relaxed else 0) \
        + (k + 1) * (k - 1) * T


def test_bdm_contains_polynomials(uni0):
    # the space contains [P^k]^2, so interpolation reproduces polynomials
    V = BDMSpace(uni0, 2, zero_bc=False)

    def g(x, y):
        return np.array([x**2 - 3 * x * y + 1, y**2 + 2 * x])
    v = interpolate_bdm(V, g)
    q = pb.triangle_rule(6)
    X = uni0.to_physical(q.points)
    assert np.allclose(v.cell_values(q.points), np.moveaxis(g(X[..., 0], X[..., 1]), 0, -1),
                       atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("flavor", ["uniform", "bary"])
def test_commuting_diagram(k, flavor):
    m = build_mesh(1, flavor)
    V = BDMSpace(m, k, zero_bc=False)
    lhs = project_broken_Q(m, divergence_of(interpolate_bdm(V, smooth_field)), k)
    rhs = project_broken_Q(m, smooth_div, k)
    assert np.abs(lhs.coefficients - rhs.coefficients).max() <= 1e-11
    # div of the interpolant already lies in P^{k-1}: projecting changes nothing
    q = pb.triangle_rule(2 * k)
    d = interpolate_bdm(V, smooth_field).cell_divergence(q.points)
    assert np.abs(d - lhs.cell_values(q.points)[..., 0]).max() <= 1e-10


@pytest.mark.parametrize("k", [2, 3])
def test_reconstruction_preserves_divergence_and_is_conforming(k, bary0):
    V = BDMSpace(bary0, k, relaxed=True, zero_bc=False)
    v = random_field(V, 7)
    w = reconstruct_relaxed(v)
    assert not w.space.relaxed
    a = project_broken_Q(bary0, divergence_of(v), k).coefficients
    b = project_broken_Q(bary0, divergence_of(w), k).coefficients
    assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(a).max())
    assert np.abs(normal_jump_moments(w, k)).max() <= 1e-11


def test_reconstruction_is_identity_on_conforming_fields(bary0):
    V = BDMSpace(bary0, 2, relaxed=True, zero_bc=False)
    P, full = V.sharing_matrix
    w = np.random.default_rng(0).standard_normal(full.ndof)
    R, _ = V.reconstruction_matrix
    assert np.allclose(R @ (P @ w), w, atol=1e-14)


def test_interpolation_averages_relaxed_field_like_reconstruction(bary0):
    V = BDMSpace(bary0, 2, relaxed=True, zero_bc=False)
    v = random_field(V, 3)
    a = interpolate_bdm(V, v).coefficients
    b = reconstruct_relaxed(v).coefficients
    assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def test_wrong_space_and_orders(uni0):
    V = BDMSpace(uni0, 2)
    with pytest.raises(WrongSpace):
        reconstruct_relaxed(V.zero())
    with pytest.raises(WrongSpace):
        V.sharing_matrix
    with pytest.raises(UnsupportedOrder):
        BDMSpace(uni0, 1, relaxed=True)
    with pytest.raises(UnsupportedOrder):
        BDMSpace(uni0, 0)
    with pytest.raises(UnsupportedOrder):
        LagrangeSpace(uni0, 0)
    with pytest.raises(UnsupportedOrder):
        FacetSpace(uni0, 0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_lagrange_continuity_and_interpolation(k, bary0):
    V = LagrangeSpace(bary0, k, zero_bc=False)
    left, right, _ = facet_traces(random_field(V, 2))
    assert np.abs(left - right).max() <= 1e-11
    nodes = V.node_coordinates
    g = lambda x, y: np.array([x**k + y, x * y**(k - 1)])
    v = V.interpolate(g)
    assert np.allclose(v(nodes[:, 0], nodes[:, 1]), g(nodes[:, 0], nodes[:, 1]))
    assert V.ndof == 2 * (bary0.n_vertices + (k - 1) * bary0.n_facets
                          + (k - 1) * (k - 2) // 2 * bary0.n_cells)


def test_lagrange_boundary_dofs(uni0):
    V = LagrangeSpace(uni0, 2)
    X = V.node_coordinates[V.boundary_nodes]
    on_boundary = (np.isclose(X, 0) | np.isclose(X, 1)).any(1)
    assert on_boundary.all()
    assert len(V.boundary_nodes) == 16 + 16  # boundary vertices plus edge midpoints
    assert len(V.dirichlet_dofs) == 2 * 32


def test_broken_space_orthonormal(uni0):
    Q = BrokenSpace(uni0, 2)
    q = pb.triangle_rule(4)
    v = FieldFunction(Q, np.eye(Q.ndof)[5])
    vals = v.cell_values(q.points)[..., 0]
    assert np.einsum("tq,q,t->", vals**2, q.weights, uni0.det_jacobians) == pytest.approx(1.0)


def test_facet_projection_reproduces_polynomials(uni0):
    g = lambda x, y: np.array([1 + 2 * x - y, 3 * y])
    M = FacetSpace(uni0, 2, zero_bc=False)
    coef = project_facet_M(uni0, g, 2)
    s = np.array([0.0, 0.3, 1.0])
    L = pb.eval_edge_basis(1, s)
    p = uni0.vertices[uni0.facets]
    X = p[:, None, 0] + s[None, :, None] * (p[:, 1] - p[:, 0])[:, None]
    assert np.allclose(np.einsum("fic,qi->fqc", coef, L),
                       np.moveaxis(g(X[..., 0], X[..., 1]), 0, -1))
    assert M.interpolate(g).shape == (M.ndof,)


def test_rigid_motion_projection(bary0):
    def rm(x, y):
        return np.array([0.5 - 2 * (y - 0.3), -1 + 2 * (x - 0.1)])
    P = project_rigid_motion(bary0, rm)
    assert np.allclose(P[:, 2], 2.0)
    q = pb.triangle_rule(2)
    X = bary0.to_physical(q.points)
    assert np.allclose(rigid_motion_values(bary0, P, q.points),
                       np.moveaxis(rm(X[..., 0], X[..., 1]), 0, -1))


def test_rigid_motion_projection_is_l2_orthogonal_in_mean():
    m = single_triangle_mesh(((0.1, 0.0), (1.2, 0.3), (0.2, 0.9)))
    P = project_rigid_motion(m, smooth_field)
    q = pb.triangle_rule(14)
    X = m.to_physical(q.points)
    resid = np.moveaxis(smooth_field(X[..., 0], X[..., 1]), 0, -1) - rigid_motion_values(m, P, q.points)
    assert np.allclose(np.einsum("tqc,q->c", resid, q.weights), 0, atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10**6))
def test_property_bdm_local_dofs_roundtrip(k, seed):
    # applying the DOF functionals to a field returns its own coefficients
    m = build_mesh(0, "bary")
    V = BDMSpace(m, k, zero_bc=False)
    v = random_field(V, seed)
    w = interpolate_bdm(V, v)
    assert np.abs(w.coefficients - v.coefficients).max() <= 1e-10 * np.abs(v.coefficients).max()
