"""
The relaxed BDM space, its reconstruction and the DOF count
===========================================================

S2 and S3 drop the highest normal moment from the inter-element coupling.
The moment then lives on each side separately, which makes it local to a
cell. This script looks at that space directly.
"""

# %%
import numpy as np

from hdg_elasticity.mesh import build_mesh
from hdg_elasticity.schemes import dof_counts
from hdg_elasticity.spaces import (BDMSpace, FacetSpace, FieldFunction, divergence_of,
                                   project_broken_Q, reconstruct_relaxed)

mesh = build_mesh(0, "bary")
k = 2
full = BDMSpace(mesh, k, zero_bc=False)
relaxed = BDMSpace(mesh, k, relaxed=True, zero_bc=False)
print(f"{mesh.n_cells} cells, {mesh.n_facets} facets")
print(f"BDM_{k}: {full.ndof} dofs, relaxed: {relaxed.ndof} dofs")

# %%
# The reconstruction averages the two one-sided top moments. The result is
# normal-continuous again and has the same elementwise divergence moments.
v = FieldFunction(relaxed, np.random.default_rng(0).standard_normal(relaxed.ndof))
w = reconstruct_relaxed(v)
a = project_broken_Q(mesh, divergence_of(v), k).coefficients
b = project_broken_Q(mesh, divergence_of(w), k).coefficients
print("divergence moments change by", np.abs(a - b).max())

# %%
# Counting the unknowns that couple neighbouring cells: S1 has 2k + 1 per
# facet (k + 1 normal moments, k tangential facet coefficients) while the
# relaxed schemes keep 2k. For k = 2 that is 5 against 4.
facets = FacetSpace(mesh, k, zero_bc=False)
for name, V in (("S1", full), ("S2/S3", relaxed)):
    n = dof_counts("S1" if V is full else "S2", {"u_T": V, "u_F": facets})
    print(f"{name:>6}: total {n['total']}, condensable {n['condensable']}, coupled {n['coupled']},"
          f" per facet {n['coupled'] / mesh.n_facets:g}")
