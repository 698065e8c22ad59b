"""
Gradient loads and the reconstruction operator
==============================================

When the load is a gradient, the exact displacement shrinks like 1/lambda:
the load is balanced by the pressure-like term. A discretization is called
gradient-robust if it reproduces this decay. Here S1 and S3 do, while S2
and Taylor-Hood level off.
"""

# %%
import numpy as np

from hdg_elasticity.cli import ExperimentConfig, run_experiment
from hdg_elasticity.analysis import fitted_slope

lambdas = (1e2, 1e4, 1e6, 1e8)
levels = (0, 1, 2)
rows = run_experiment(ExperimentConfig(example="ex2", schemes=("S1", "S2", "S3", "M2", "SV"), k=2,
                                       levels=levels, lambdas=lambdas))

# %%
# Broken H1 seminorm of the discrete displacement. Without an exact solution
# the error columns of this example are NA; the norm of u_h is what matters.
print("scheme level " + "".join(f"{lam:>11g}" for lam in lambdas) + "   slope")
for scheme in ("S1", "S2", "S3", "M2", "SV"):
    for lvl in levels:
        g = [r["grad_norm"] for r in rows if r["scheme"] == scheme and r["level"] == lvl]
        print(f"{scheme:>6} {lvl:5d} " + "".join(f"{x:11.3e}" for x in g)
              + f"  {fitted_slope(lambdas, g):+6.3f}")

# %%
# S2 and S3 share one stiffness matrix. Their only difference is the right
# hand side: S3 tests the load against the normal-continuous reconstruction
# of the relaxed test function. That is enough to turn a plateau into a
# slope of -1, and the S2 plateau only shrinks as the mesh is refined.
s2 = [r["grad_norm"] for r in rows if r["scheme"] == "S2" and r["lambda"] == 1e8]
print("S2 plateau per level:", np.round(s2, 5))
