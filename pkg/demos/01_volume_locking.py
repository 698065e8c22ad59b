"""
Volume locking and how to avoid it
==================================

Plain Lagrange P1 elements lose their convergence once the material becomes
nearly incompressible. This script shows the effect on the smooth
divergence-free test problem and compares it with Taylor-Hood and the
divergence-conforming HDG scheme S1.
"""

# %%
# Nothing needs to be set up beyond the package; the experiment driver used
# by the command line tool returns plain dictionaries.
import numpy as np

from hdg_elasticity.cli import ExperimentConfig, run_experiment

levels = (0, 1, 2, 3)
lambdas = (1.0, 1e2, 1e5)


def table(scheme, k):
    rows = run_experiment(ExperimentConfig(example="ex1", schemes=(scheme,), k=k, levels=levels,
                                           lambdas=lambdas))
    print(f"\n{scheme}, k={k}: L2 error by level (rows) and lambda (columns)")
    print("level " + "".join(f"{lam:>12g}" for lam in lambdas))
    for lvl in levels:
        errs = [r["l2_err"] for r in rows if r["level"] == lvl]
        print(f"{lvl:5d} " + "".join(f"{e:12.3e}" for e in errs))
    return rows


# %%
# With lambda = 1 the P1 error drops by a factor four per refinement. At
# lambda = 1e5 it stalls: the discrete divergence-free fields on this mesh
# are too few to approximate the solution.
m1 = table("M1", 1)

# %%
# Taylor-Hood (P2 velocity, continuous P1 pressure) introduces the pressure
# as a separate unknown and its error barely depends on lambda.
m2 = table("M2", 2)

# %%
# S1 builds the displacement from BDM fields, which are exactly
# divergence-conforming, and couples tangential traces through facet
# unknowns. It runs on barycentric refinements of the same meshes.
s1 = table("S1", 2)

# %%
# The worst ratio between the largest and smallest error across lambda at a
# fixed level summarizes robustness.
for name, rows in (("M1", m1), ("M2", m2), ("S1", s1)):
    worst = max(max(e) / min(e) for e in
                ([r["l2_err"] for r in rows if r["level"] == lvl] for lvl in levels))
    print(f"{name}: worst lambda ratio {worst:6.2f}")
print("M1 locks; M2 and S1 stay close to one")
