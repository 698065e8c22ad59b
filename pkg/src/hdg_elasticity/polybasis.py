"""Quadrature rules and polynomial bases on the reference triangle and edge.

Reference triangle: vertices (0, 0), (1, 0), (0, 1), area 1/2.
Reference edge: the unit interval [0, 1].
"""

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import mpmath
import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 20


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)


def _check_degree(degree):
    if not 0 <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(f"quadrature degree {degree} outside [0, {MAX_DEGREE}]")


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule on the reference triangle.

    Uses ``n = ceil((degree + 1) / 2)`` points per direction; the Duffy
    factor ``(1 - x)`` is absorbed into a Gauss-Jacobi(1, 0) rule, so all
    weights are positive. For ``degree <= 1`` this is the centroid rule.
    """
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    # Jacobi weight (1 - t)^1 on [-1, 1]
    tj, wj = roots_jacobi(n, 1.0, 0.0)
    tl, wl = roots_legendre(n)
    u = (tj + 1.0) / 2.0
    wu = wj / 4.0
    v = (tl + 1.0) / 2.0
    wv = wl / 2.0
    X = np.repeat(u, n)
    W = np.repeat(wu, n) * np.tile(wv, n)
    Y = (1.0 - X) * np.tile(v, n)
    points = np.stack([X, Y], axis=-1)
    points.setflags(write=False)
    W.setflags(write=False)
    return QuadratureRule(points, W, 2 * n - 1)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    t, w = roots_legendre(n)
    points = (t + 1.0) / 2.0
    weights = w / 2.0
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, 2 * n - 1)


def monomial_exponents(k):
    """Exponents (a, b) of x^a y^b, graded by total degree."""
    return [(d - b, b) for d in range(k + 1) for b in range(d + 1)]


def scalar_dim(k):
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def triangle_monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@lru_cache(maxsize=None)
def _orthonormal_coefficients(k):
    # Gram-Schmidt in graded order == Cholesky of the monomial Gram matrix.
    # The Gram matrix is Hilbert-like, so factor it in 50-digit arithmetic.
    exps = monomial_exponents(k)
    with mpmath.workdps(50):
        G = mpmath.matrix([[mpmath.mpf(factorial(a1 + a2) * factorial(b1 + b2))
                            / factorial(a1 + a2 + b1 + b2 + 2)
                            for (a2, b2) in exps] for (a1, b1) in exps])
        L = mpmath.cholesky(G)
        R = np.array((L**-1).T.tolist(), dtype=float)  # monomials @ R is orthonormal
    R.setflags(write=False)
    return R


def _monomials(k, points):
    points = np.asarray(points, dtype=float)
    x = points[..., 0]
    y = points[..., 1]
    return np.stack([x**a * y**b for (a, b) in monomial_exponents(k)], axis=-1)


def _monomial_grads(k, points):
    points = np.asarray(points, dtype=float)
    x = points[..., 0]
    y = points[..., 1]
    out = []
    for a, b in monomial_exponents(k):
        dx = a * x ** max(a - 1, 0) * y**b if a > 0 else np.zeros_like(x)
        dy = b * x**a * y ** max(b - 1, 0) if b > 0 else np.zeros_like(x)
        out.append(np.stack([dx, dy], axis=-1))
    return np.stack(out, axis=-2)


def eval_scalar_basis(k: int, points) -> np.ndarray:
    """Orthonormal P^k basis on the reference triangle.

    ``points`` has shape (..., 2); the result has shape (..., dim P^k).
    The first ``scalar_dim(j)`` functions span P^j for every j <= k.
    """
    if k < 0:
        raise UnsupportedDegree(k)
    return _monomials(k, points) @ _orthonormal_coefficients(k)


def eval_scalar_grads(k: int, points) -> np.ndarray:
    """Reference gradients of :func:`eval_scalar_basis`, shape (..., dim, 2)."""
    if k < 0:
        raise UnsupportedDegree(k)
    R = _orthonormal_coefficients(k)
    return np.einsum("...md,mi->...id", _monomial_grads(k, points), R)


def eval_edge_basis(k: int, s) -> np.ndarray:
    """Legendre polynomials of degree 0..k on [0, 1], orthonormal for ds.

    Returns shape (..., k + 1).
    """
    if k < 0:
        raise UnsupportedDegree(k)
    s = np.asarray(s, dtype=float)
    V = np.polynomial.legendre.legvander(2.0 * s - 1.0, k)
    return V * np.sqrt(2.0 * np.arange(k + 1) + 1.0)


def lattice_points(k):
    """Equispaced Lagrange nodes of P^k on the reference triangle.

    Order: vertices, then k-1 nodes on each local edge (v0->v1, v1->v2,
    v2->v0) in edge direction, then interior nodes.
    """
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if k == 0:
        return np.array([[1 / 3, 1 / 3]])
    pts = [V[0], V[1], V[2]]
    for e in range(3):
        a, b = V[e], V[(e + 1) % 3]
        for j in range(1, k):
            pts.append(a + (b - a) * j / k)
    for j in range(1, k):
        for i in range(1, k - j):
            pts.append(np.array([i / k, j / k]))
    return np.array(pts)
