import warnings

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from hdg_elasticity import polybasis as pb
from hdg_elasticity.analysis import energy_gram
from hdg_elasticity.assembly import (CoercivityWarning, ConfigError, ForcingSpec, SchemeConfig,
                                     apply_dirichlet, assemble_hdg, assemble_hdg_parts,
                                     assemble_m1, assemble_m2, assemble_rhs_reconstructed,
                                     hdg_load)
from hdg_elasticity.mesh import build_mesh, single_triangle_mesh
from hdg_elasticity.problems import example_gradient_load, rigid_motion
from hdg_elasticity.spaces import BDMSpace, FacetSpace, interpolate_bdm

ZERO = ForcingSpec.zero()


def cfg(scheme, k=2, flavor="uniform", **kw):
    return SchemeConfig(scheme, k, mesh_flavor=flavor, **kw)


@pytest.mark.parametrize("scheme", ["M1", "M2", "S1", "S2", "S3"])
def test_symmetry(scheme, uni0):
    c = cfg(scheme, lam=1e5)
    s = assemble_m2(uni0, c, ZERO) if scheme == "M2" else (
        assemble_m1(uni0, c, ZERO) if scheme == "M1" else assemble_hdg(uni0, c, ZERO))
    A = s.A
    assert abs(A - A.T).max() / abs(A).max() <= 1e-12
    assert A.has_canonical_format


def test_grad_div_part_has_no_facet_terms_and_same_pattern(uni0):
    s0 = assemble_hdg(uni0, cfg("S1", lam=0.0), ZERO)
    s1 = assemble_hdg(uni0, cfg("S1", lam=1e5), ZERO)
    assert np.array_equal(s0.A.indptr, s1.A.indptr)
    assert np.array_equal(s0.A.indices, s1.A.indices)
    assert np.allclose((s1.A - s0.A).toarray(), 1e5 * s1.blocks["A_div"].toarray(),
                       rtol=0, atol=1e-12 * abs(s1.A).max())
    nV = s1.blocks["u_T"][1]
    assert abs(s1.blocks["A_div"][nV:]).max() == 0.0
    assert abs(s0.A - s0.blocks["A_mu"]).max() == 0.0


def test_penalty_doubling_changes_only_penalty(bary0):
    V, M = BDMSpace(bary0, 2), FacetSpace(bary0, 2)
    A1, _ = assemble_hdg_parts(bary0, V, M, 1.0, alpha=80.0)
    A2, _ = assemble_hdg_parts(bary0, V, M, 1.0, alpha=160.0)
    P_on, _ = assemble_hdg_parts(bary0, V, M, 1.0, alpha=1.0, consistency=False, penalty=80.0)
    P_off, _ = assemble_hdg_parts(bary0, V, M, 1.0, alpha=1.0, consistency=False, penalty=0.0)
    assert abs((A2 - A1) - (P_on - P_off)).max() <= 1e-12 * abs(A1).max()
    R = rigid_motion()
    for a0 in (20.0, 40.0):
        s = assemble_hdg(bary0, cfg("S1", flavor="bary", alpha0=a0), R.forcing, R.bc)
        A, b, free = apply_dirichlet(s)
        x = sp.linalg.spsolve(A.tocsc(), b)
        exact = interpolate_bdm(s.blocks["spaces"]["u_T"], R.bc).coefficients
        assert np.abs(x[:len(exact) - len(s.blocks["spaces"]["u_T"].dirichlet_dofs)]).max() > 0
        full = np.zeros(s.n)
        full[free] = x
        full[s.constrained] = s.values
        assert np.abs(full[:len(exact)] - exact).max() <= 1e-10


@pytest.mark.parametrize("scheme,k,flavor", [("S1", 1, "uniform"), ("S1", 2, "bary"),
                                             ("S2", 2, "bary"), ("S2", 3, "uniform")])
def test_rigid_motion_residual(scheme, k, flavor):
    m = build_mesh(0, flavor)
    s = assemble_hdg(m, cfg(scheme, k, flavor, lam=1e3), ZERO)
    V, M = s.blocks["spaces"]["u_T"], s.blocks["spaces"]["u_F"]
    R = rigid_motion().bc
    xv = interpolate_bdm(V, R).coefficients
    if V.relaxed:
        xv = V.sharing_matrix[0] @ xv
    x = np.concatenate([xv, M.interpolate(R)])
    assert np.abs(s.blocks["A_mu"] @ x).max() <= 1e-10
    assert np.abs(s.blocks["A_div"] @ x).max() <= 1e-10


def test_s1_is_s2_with_shared_top_moment(bary0):
    s1 = assemble_hdg(bary0, cfg("S1", flavor="bary", lam=1e2), ZERO)
    s2 = assemble_hdg(bary0, cfg("S2", flavor="bary", lam=1e2), ZERO)
    P, full = s2.blocks["spaces"]["u_T"].sharing_matrix
    nM = s2.blocks["spaces"]["u_F"].ndof
    Pf = sp.block_diag([P, sp.identity(nM)]).tocsr()
    diff = (Pf.T @ s2.A @ Pf - s1.A)
    assert abs(diff).max() <= 1e-12 * abs(s1.A).max()


@pytest.mark.parametrize("level", [0, 1, 2])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_coercivity_proxy_against_norm_gram(level, k):
    # alpha0 = 10 on uniform meshes, 100 random zero-BC vectors
    m = build_mesh(level, "uniform")
    s = assemble_hdg(m, cfg("S1", k, alpha0=10.0), ZERO)
    V, M = s.blocks["spaces"]["u_T"], s.blocks["spaces"]["u_F"]
    G = energy_gram(m, V, M)[s.free][:, s.free]
    A = s.blocks["A_mu"][s.free][:, s.free]
    X = np.random.default_rng(level * 10 + k).standard_normal((len(s.free), 100))
    q = np.einsum("ij,ij->j", X, A @ X) / np.einsum("ij,ij->j", X, G @ X)
    assert q.min() >= 0.1


@pytest.mark.parametrize("scheme,k", [("S1", 1), ("S1", 2), ("S2", 2), ("S2", 3)])
def test_default_penalty_is_coercive_on_barycentric_meshes(scheme, k, bary0):
    s = assemble_hdg(bary0, cfg(scheme, k, "bary"), ZERO)
    A = s.blocks["A_mu"][s.free][:, s.free].toarray()
    assert np.linalg.eigvalsh(A)[0] > 0


def test_alpha0_10_is_too_small_on_barycentric_meshes(bary0):
    # the reason the barycentric default is 20
    s = assemble_hdg(bary0, cfg("S2", 2, "bary", alpha0=10.0), ZERO, check_coercivity=False)
    A = s.blocks["A_mu"][s.free][:, s.free].toarray()
    assert np.linalg.eigvalsh(A)[0] < 0


def test_coercivity_warning(uni0):
    with pytest.warns(CoercivityWarning):
        assemble_hdg(uni0, cfg("S1", 2, alpha0=0.01), ZERO)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assemble_hdg(uni0, cfg("S1", 2), ZERO)


@pytest.mark.parametrize("kw", [dict(scheme="S2", k=1), dict(scheme="S3", k=1),
                                dict(scheme="M2", k=1), dict(scheme="SV", k=2),
                                dict(scheme="XX", k=2), dict(scheme="S1", k=0),
                                dict(scheme="S1", k=2, mu=0.0), dict(scheme="S1", k=2, lam=-1.0),
                                dict(scheme="S1", k=2, stokes_limit=True),
                                dict(scheme="S1", k=2, alpha0=-1.0)])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        SchemeConfig(**kw).validate()


def test_m1_p1_single_triangle_against_hand_formula():
    m = single_triangle_mesh(((0.0, 0.0), (2.0, 0.5), (0.5, 1.5)))
    mu, lam = 0.7, 3.0
    s = assemble_m1(m, cfg("M1", 1, mu=mu, lam=lam), ZERO)
    X = m.vertices
    T = np.hstack([np.ones((3, 1)), X])
    grads = np.linalg.inv(T)[1:].T  # grad of barycentric coordinate i
    area = 0.5 * abs(np.linalg.det(T))
    K = np.zeros((6, 6))
    for i in range(3):
        for j in range(3):
            for c in range(2):
                for d in range(2):
                    val = mu * ((c == d) * grads[i] @ grads[j] + grads[i, d] * grads[j, c]) \
                        + lam * grads[i, c] * grads[j, d]
                    K[c * 3 + i, d * 3 + j] = area * val
    assert np.allclose(s.A.toarray(), K, atol=1e-13)


def test_zero_bc_leaves_rhs(uni0):
    f = ForcingSpec.analytic(lambda x, y, mu, lam: np.array([np.sin(x), y * 0 + 1]))
    s = assemble_m1(uni0, cfg("M1", 2), f)
    _, b, free = apply_dirichlet(s)
    assert np.array_equal(b, s.b[free])


def test_m2_schur_and_stokes_limit(uni0):
    from hdg_elasticity.problems import example_divergence_free
    from hdg_elasticity.schemes import solve_scheme
    P = example_divergence_free()
    a = solve_scheme(uni0, cfg("M2", lam=1e3), P.forcing, P.bc)
    b = solve_scheme(uni0, cfg("M2", lam=1e3), P.forcing, P.bc, schur=True)
    assert np.allclose(a.u_T.coefficients, b.u_T.coefficients, atol=1e-9)
    assert np.allclose(a.p_h.coefficients, b.p_h.coefficients, atol=1e-7)
    st = solve_scheme(uni0, cfg("M2", stokes_limit=True), P.forcing, P.bc)
    big = solve_scheme(uni0, cfg("M2", lam=1e10), P.forcing, P.bc)
    assert np.allclose(st.u_T.coefficients, big.u_T.coefficients, atol=1e-8)
    sys_ = assemble_m2(uni0, cfg("M2", stokes_limit=True), P.forcing, P.bc)
    nQ = sys_.blocks["M"].shape[0]
    assert sys_.n == sys_.blocks["A"].shape[0] + nQ + 1


def _divergence_free_relaxed_tests(mesh, V):
    """Basis of relaxed fields with zero boundary normal moments and zero elementwise div."""
    q = pb.triangle_rule(2 * V.k)
    k = V.k
    G = pb.eval_scalar_grads(k, q.points)  # (nq, dim, 2)
    Qb = pb.eval_scalar_basis(k - 1, q.points)
    Ji = mesh.inv_jacobians
    dphys = np.einsum("tad,qia->tqid", Ji, G)  # (T, nq, dim, 2)
    div_raw = np.concatenate([dphys[..., 0], dphys[..., 1]], axis=-1)  # raw (c, i) order
    Dloc = np.einsum("qm,tqr,q,trl->tml", Qb, div_raw, q.weights, V.C)
    T, nQ = mesh.n_cells, Qb.shape[1]
    rows = np.broadcast_to((np.arange(T)[:, None] * nQ + np.arange(nQ))[:, :, None], Dloc.shape)
    cols = np.broadcast_to(V.cell_dofs[:, None, :], Dloc.shape)
    D = sp.coo_matrix((Dloc.ravel(), (rows.ravel(), cols.ravel())), shape=(T * nQ, V.ndof))
    free = V.free_dofs
    N = sla.null_space(D.toarray()[:, free])
    return free, N


def test_reconstructed_load_kills_gradients_on_divergence_free_tests(bary0):
    V = BDMSpace(bary0, 2, relaxed=True)
    M = FacetSpace(bary0, 2)
    free, N = _divergence_free_relaxed_tests(bary0, V)
    assert N.shape[1] > 0
    c = cfg("S3", flavor="bary")
    f = example_gradient_load().forcing
    b3 = assemble_rhs_reconstructed(bary0, c, f, V, M)[:V.ndof][free]
    b2 = hdg_load(bary0, V, M, c, f)[:V.ndof][free]
    v = N @ np.random.default_rng(0).standard_normal(N.shape[1])
    v /= np.linalg.norm(v)
    assert abs(b3 @ v) <= 1e-11
    assert abs(b2 @ v) > 1e-6  # the plain load does not see the reconstruction


def test_reconstructed_load_equals_standard_on_conforming_tests(bary0):
    V = BDMSpace(bary0, 2, relaxed=True)
    M = FacetSpace(bary0, 2)
    P, full = V.sharing_matrix
    c = cfg("S3", flavor="bary")
    f = example_gradient_load().forcing
    w = np.random.default_rng(4).standard_normal(full.ndof)
    b3 = assemble_rhs_reconstructed(bary0, c, f, V, M)[:V.ndof]
    b2 = hdg_load(bary0, V, M, c, f)[:V.ndof]
    assert b3 @ (P @ w) == pytest.approx(b2 @ (P @ w), rel=1e-12)


def test_reconstructed_load_difference_decays_with_h():
    f = ForcingSpec.analytic(lambda x, y, mu, lam: np.array([np.sin(3 * x + y), np.cos(2 * y)]))
    d = []
    for level in range(3):
        m = build_mesh(level, "bary")
        V, M = BDMSpace(m, 2, relaxed=True), FacetSpace(m, 2)
        c = cfg("S3", flavor="bary")
        v = np.random.default_rng(level).standard_normal(V.ndof)
        b3 = assemble_rhs_reconstructed(m, c, f, V, M)[:V.ndof]
        b2 = hdg_load(m, V, M, c, f)[:V.ndof]
        from hdg_elasticity.spaces import FieldFunction
        qr = pb.triangle_rule(4)
        Gv = FieldFunction(V, v).cell_gradients(qr.points)
        grad = np.sqrt(np.einsum("tqcd,tqcd,q,t->", Gv, Gv, qr.weights, m.det_jacobians))
        d.append(abs(b3 @ v - b2 @ v) / grad)
    assert d[1] < 0.75 * d[0] and d[2] < 0.75 * d[1]
