"""Model problems: forcing, boundary data and (when known) the exact solution.

Fields follow the library convention ``g(x, y) -> array of shape (2, ...)``.
"""

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import sympy

from .assembly import ForcingSpec

pi = np.pi


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad: Callable  # (2, 2, ...) with grad[c, d] = d u_c / d x_d
    div: Callable


@dataclass(frozen=True)
class Problem:
    name: str
    forcing: ForcingSpec
    bc: Optional[Callable] = None
    exact: Optional[ExactSolution] = None


def example_divergence_free():
    """u = (sin pi x sin pi y, cos pi x cos pi y), div u = 0, f = 2 mu pi^2 u."""
    def u(x, y):
        return np.array([np.sin(pi * x) * np.sin(pi * y), np.cos(pi * x) * np.cos(pi * y)])

    def grad(x, y):
        sx, sy, cx, cy = np.sin(pi * x), np.sin(pi * y), np.cos(pi * x), np.cos(pi * y)
        return pi * np.array([[cx * sy, sx * cy], [-sx * cy, -cx * sy]])

    def div(x, y):
        return np.zeros(np.shape(x))

    f = ForcingSpec.analytic(lambda x, y, mu, lam: 2 * mu * pi**2 * u(x, y))
    return Problem("ex1", f, bc=u, exact=ExactSolution(u, grad, div))


def example_gradient_load():
    """f = grad(x^6 + y^6) with homogeneous Dirichlet data; u -> 0 like 1/lambda."""
    f = ForcingSpec.gradient(lambda x, y: x**6 + y**6,
                             lambda x, y: np.array([6 * x**5, 6 * y**5]))
    return Problem("ex2", f)


def example_polynomial():
    """u = (x^2 y, -x y^2): divergence free, exactly representable for k >= 3 and
    with traction of degree <= k - 1 on facets for k = 2."""
    def u(x, y):
        return np.array([x**2 * y, -x * y**2])

    def grad(x, y):
        return np.array([[2 * x * y, x**2], [-y**2, -2 * x * y]])

    def div(x, y):
        return np.zeros(np.shape(x))

    f = ForcingSpec.analytic(lambda x, y, mu, lam: 2 * mu * np.array([-y, x]))
    return Problem("manufactured-poly", f, bc=u, exact=ExactSolution(u, grad, div))


def rigid_motion(a=(0.3, -0.2), b=0.7):
    """a + b (-y, x) with f = 0; every scheme must reproduce it."""
    def u(x, y):
        return np.array([a[0] - b * y + 0 * x, a[1] + b * x + 0 * y])

    def grad(x, y):
        z = np.zeros(np.shape(x))
        return np.array([[z, z - b], [z + b, z]])

    def div(x, y):
        return np.zeros(np.shape(x))

    return Problem("rigid-motion", ForcingSpec.zero(), bc=u, exact=ExactSolution(u, grad, div))


# ----------------------------------------------------------- expressions

_x, _y = sympy.symbols("x y", real=True)
_ALLOWED = {"x": _x, "y": _y, "sin": sympy.sin, "cos": sympy.cos, "pi": sympy.pi}


def parse_expression(text: str):
    """Parse the tiny grammar (x, y, + - * / ^, sin, cos, pi, numbers) to sympy."""
    from sympy.parsing.sympy_parser import (convert_xor, implicit_multiplication,
                                            parse_expr, standard_transformations)
    for word in _identifiers(text):
        if word not in _ALLOWED:
            raise ExpressionError(f"unknown identifier {word!r} in {text!r}")
    try:
        expr = parse_expr(text, local_dict=dict(_ALLOWED), global_dict={"Integer": sympy.Integer,
                          "Float": sympy.Float, "Rational": sympy.Rational, "Symbol": sympy.Symbol},
                          transformations=standard_transformations + (convert_xor,
                                                                      implicit_multiplication))
    except Exception as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    if not expr.free_symbols <= {_x, _y}:
        raise ExpressionError(f"{text!r} depends on symbols other than x and y")
    return expr


def _identifiers(text):
    return re.findall(r"[A-Za-z_][A-Za-z_0-9]*", text)


def lambdify_scalar(expr):
    fn = sympy.lambdify((_x, _y), expr, "numpy")
    return lambda x, y: np.broadcast_to(np.asarray(fn(x, y), float), np.shape(x)).copy()


def example_thermo(theta="sin(3x)*cos(2y)", alpha_th=1e-3):
    """Thermoelastic load f = -(2 mu + 3 lam) alpha_th grad(theta), clamped boundary."""
    expr = parse_expression(theta)
    th = lambdify_scalar(expr)
    gx = lambdify_scalar(sympy.diff(expr, _x))
    gy = lambdify_scalar(sympy.diff(expr, _y))
    f = ForcingSpec.thermo(th, lambda x, y: np.array([gx(x, y), gy(x, y)]), alpha_th)
    return Problem("thermo", f)


def get_problem(name: str, theta=None, alpha_th=1e-3) -> Problem:
    if name == "ex1":
        return example_divergence_free()
    if name == "ex2":
        return example_gradient_load()
    if name == "manufactured-poly":
        return example_polynomial()
    if name == "thermo":
        return example_thermo(theta or "sin(3x)*cos(2y)", alpha_th)
    raise KeyError(name)


PROBLEMS = ("ex1", "ex2", "thermo", "manufactured-poly")
