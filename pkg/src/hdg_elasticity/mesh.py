"""Structured triangulations of the unit square and barycentric refinement."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class NonManifold(ValueError):
    """A facet is shared by more than two triangles."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D simplicial mesh with facet topology.

    Triangles are counterclockwise. Local edge ``e`` of a triangle joins its
    vertices ``e`` and ``(e + 1) % 3``. Facets are stored with sorted vertex
    pairs ``(a, b)``, ``a < b``; the facet tangent points from ``a`` to ``b``
    and the facet normal is the outward normal of the first adjacent
    triangle.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    facets: np.ndarray = field(repr=False)
    facet_cells: np.ndarray = field(repr=False)  # (E, 2), -1 if boundary
    facet_local: np.ndarray = field(repr=False)  # (E, 2) local edge index
    cell_facets: np.ndarray = field(repr=False)  # (T, 3)
    flavor: str = "uniform"
    level: int = 0

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.facets, self.facet_cells,
                    self.facet_local, self.cell_facets):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.triangles)

    @property
    def n_facets(self):
        return len(self.facets)

    @cached_property
    def boundary_facets(self):
        return self.facet_cells[:, 1] < 0

    @cached_property
    def facet_length(self):
        p = self.vertices[self.facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def facet_tangent(self):
        p = self.vertices[self.facets]
        return (p[:, 1] - p[:, 0]) / self.facet_length[:, None]

    @cached_property
    def facet_normal(self):
        T = self.facet_cells[:, 0]
        e = self.facet_local[:, 0]
        return self.cell_normals[T, e]

    @cached_property
    def jacobians(self):
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)

    @cached_property
    def det_jacobians(self):
        return np.linalg.det(self.jacobians)

    @cached_property
    def inv_jacobians(self):
        return np.linalg.inv(self.jacobians)

    @cached_property
    def areas(self):
        return 0.5 * self.det_jacobians

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def cell_normals(self):
        """Outward unit normals, shape (T, 3, 2), for local edges."""
        p = self.vertices[self.triangles]
        d = np.roll(p, -1, axis=1) - p
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    @cached_property
    def cell_edge_lengths(self):
        return self.facet_length[self.cell_facets]

    @cached_property
    def cell_facet_sign(self):
        """+1 where the element outward normal equals the facet normal."""
        s = np.einsum("tec,tec->te", self.cell_normals, self.facet_normal[self.cell_facets])
        return np.rint(s)

    @cached_property
    def cell_edge_aligned(self):
        """True where local edge direction v_e -> v_{e+1} matches the facet tangent."""
        tri = self.triangles
        start = tri
        return self.facets[self.cell_facets, 0] == start

    @property
    def h(self):
        """Smallest edge length."""
        return float(self.facet_length.min())

    def to_physical(self, ref_points):
        """Map reference points (..., 2) to all cells -> (T, ..., 2)."""
        x0 = self.vertices[self.triangles[:, 0]]
        return x0.reshape((-1,) + (1,) * (ref_points.ndim - 1) + (2,)) + np.einsum(
            "tij,...j->t...i", self.jacobians, ref_points)

    def dump(self, path):
        """Plain-text dump: vertex lines ``v x y`` then triangle lines ``t a b c``."""
        with open(path, "w") as fh:
            for x, y in self.vertices:
                fh.write(f"v {x:.17g} {y:.17g}\n")
            for a, b, c in self.triangles:
                fh.write(f"t {a} {b} {c}\n")


def facet_topology(triangles):
    """Deduplicate edges; returns facets, facet_cells, facet_local, cell_facets."""
    triangles = np.asarray(triangles)
    T = len(triangles)
    local = np.stack([triangles, np.roll(triangles, -1, axis=1)], axis=-1)  # (T, 3, 2)
    keys = np.sort(local.reshape(-1, 2), axis=1)
    facets, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise NonManifold(f"{int(np.sum(counts > 2))} facets with more than two cells")
    cell_facets = inverse.reshape(T, 3)
    facet_cells = -np.ones((len(facets), 2), dtype=np.int64)
    facet_local = -np.ones((len(facets), 2), dtype=np.int64)
    # ascending (cell, edge) order makes the lowest cell id the first neighbour
    for slot_index, f in enumerate(inverse):
        t, e = divmod(slot_index, 3)
        slot = 0 if facet_cells[f, 0] < 0 else 1
        facet_cells[f, slot] = t
        facet_local[f, slot] = e
    return facets, facet_cells, facet_local, cell_facets


def _make_mesh(vertices, triangles, flavor, level):
    triangles = np.asarray(triangles, dtype=np.int64)
    facets, facet_cells, facet_local, cell_facets = facet_topology(triangles)
    return Mesh(np.asarray(vertices, dtype=float), triangles, facets, facet_cells,
                facet_local, cell_facets, flavor=flavor, level=level)


def build_uniform_unit_square(level: int) -> Mesh:
    """Criss mesh of the unit square with ``n = 2**(level + 2)`` cells per side.

    Each square is split along its lower-left to upper-right diagonal.
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    n = 2 ** (level + 2)
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    vertices = np.stack([i.ravel(), j.ravel()], axis=1) / n
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (jj * (n + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return _make_mesh(vertices, triangles, "uniform", level)


def barycentric_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into three by connecting its vertices to its barycenter."""
    T = mesh.n_cells
    c = mesh.n_vertices + np.arange(T)
    vertices = np.vstack([mesh.vertices, mesh.centroids])
    t = mesh.triangles
    children = np.stack([
        np.stack([t[:, 0], t[:, 1], c], axis=1),
        np.stack([t[:, 1], t[:, 2], c], axis=1),
        np.stack([t[:, 2], t[:, 0], c], axis=1),
    ], axis=1).reshape(-1, 3)
    return _make_mesh(vertices, children, "barycentric", mesh.level)


def build_mesh(level: int, flavor: str = "uniform") -> Mesh:
    mesh = build_uniform_unit_square(level)
    if flavor in ("bary", "barycentric"):
        return barycentric_refine(mesh)
    if flavor != "uniform":
        raise ValueError(f"unknown mesh flavor {flavor!r}")
    return mesh


def single_triangle_mesh(vertices=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))) -> Mesh:
    return _make_mesh(np.asarray(vertices, float), [[0, 1, 2]], "single", 0)


def two_triangle_square() -> Mesh:
    vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    return _make_mesh(vertices, [[0, 1, 2], [0, 2, 3]], "uniform", -1)
