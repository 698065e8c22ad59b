import numpy as np
import pytest

from hdg_elasticity import polybasis as pb
from hdg_elasticity.mesh import build_mesh
from hdg_elasticity.spaces import edge_ref_points


def facet_traces(field, mesh=None, degree=10):
    """Both one-sided traces on interior facets, ordered by the global facet parameter.

    Returns (left, right, s) with left/right of shape (E_int, nq, ncomp).
    """
    mesh = mesh or field.space.mesh
    eq = pb.edge_rule(degree)
    vals = field.cell_values(edge_ref_points(eq.points))  # (T, 3, nq, c)
    inner = np.flatnonzero(~mesh.boundary_facets)
    sides = []
    for j in range(2):
        t, e = mesh.facet_cells[inner, j], mesh.facet_local[inner, j]
        v = vals[t, e]
        flip = ~mesh.cell_edge_aligned[t, e]
        v[flip] = v[flip, ::-1]
        sides.append(v)
    return sides[0], sides[1], eq


def normal_jump_moments(field, k):
    """Legendre moments of the normal jump on interior facets, shape (E_int, k + 1)."""
    m = field.space.mesh
    left, right, eq = facet_traces(field)
    n = m.facet_normal[~m.boundary_facets]
    jump = np.einsum("fqc,fc->fq", left - right, n)
    L = pb.eval_edge_basis(k, eq.points)
    return np.einsum("fq,q,qi->fi", jump, eq.weights, L)


ACCEPTANCE = []  # (criterion, verdict, detail) lines filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bary0():
    return build_mesh(0, "bary")


@pytest.fixture(scope="session")
def uni0():
    return build_mesh(0, "uniform")


def smooth_field(x, y):
    return np.array([np.sin(2 * x + y) + x**3, np.cos(x - 3 * y) * np.exp(y)])


def smooth_div(x, y):
    return 2 * np.cos(2 * x + y) + 3 * x**2 + np.exp(y) * (3 * np.sin(x - 3 * y) + np.cos(x - 3 * y))
