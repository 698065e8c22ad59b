"""Direct sparse solvers with an a-posteriori residual contract.

Factorizations are SuperLU (``scipy.sparse.linalg.splu``). For SPD systems
the factorization runs in symmetric mode without row pivoting, so the
diagonal of ``U`` holds the LDL^T pivots and positive definiteness can be
read off their signs.

Iterative refinement keeps the iterate and the residual in extended
precision (``np.longdouble``) while the factorization stays in binary64.
For stiff systems with a non-small solution (lambda = 1e8 with a
non-robust scheme) the binary64 floor of ``||Ax - b|| / ||b||`` is about
``eps ||A|| ||x|| / ||b||``, above the contract; the extended iterate gets
below it. Solutions are returned as ``np.longdouble`` arrays.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SPD_TOL = 1e-10
INDEFINITE_TOL = 1e-9


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(f"residual {residual:.3e} after {iterations} refinement steps")
        self.iterations = iterations
        self.residual = residual


def as_csr(A):
    """Canonical CSR: sorted unique column indices, explicit zeros dropped."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def relative_residual(A, x, b):
    """||Ax - b|| / ||b||, evaluated in the wider of the two precisions."""
    r = A @ x - b
    nb = float(np.sqrt(np.sum(np.asarray(b) ** 2)))
    nr = float(np.sqrt(np.sum(r * r)))
    return nr / nb if nb > 0 else nr


def _refine(A, lu, b, tol, max_steps=12):
    """Refine past ``tol`` while the residual still halves; raise if ``tol`` is missed."""
    Aw = A.astype(np.longdouble)
    bw = b.astype(np.longdouble)
    x = lu.solve(b).astype(np.longdouble)
    r = bw - Aw @ x
    res = relative_residual(Aw, x, bw)
    steps = 0
    while steps < max_steps and res > 0:
        x_new = x + lu.solve(r.astype(float))
        r_new = bw - Aw @ x_new
        res_new = relative_residual(Aw, x_new, bw)
        steps += 1
        progress = res_new < 0.5 * res
        if res_new < res:
            x, r, res = x_new, r_new, res_new
        if not progress and res <= tol:
            break
    if res > tol:
        raise NoConvergence(steps, res)
    return x, res


def solve_spd(A, b, tol=SPD_TOL, return_info=False):
    """Solve an SPD system; raises NotPositiveDefinite on a nonpositive pivot."""
    A = sp.csc_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        x = np.zeros(0, dtype=np.longdouble)
        return (x, {"residual": 0.0}) if return_info else x
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:  # exactly singular
        raise NotPositiveDefinite(str(exc)) from exc
    if np.any(lu.perm_r != lu.perm_c):
        raise NotPositiveDefinite("symmetric factorization needed row pivoting")
    if np.any(lu.U.diagonal() <= 0):
        raise NotPositiveDefinite("nonpositive pivot in LDL^T factorization")
    x, res = _refine(A, lu, b, tol)
    return (x, {"residual": res}) if return_info else x


def solve_symmetric_indefinite(A, b, tol=INDEFINITE_TOL, return_info=False):
    """Solve a nonsingular symmetric (possibly indefinite) system by pivoted LU."""
    A = sp.csc_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    lu = spla.splu(A, permc_spec="COLAMD")
    x, res = _refine(A, lu, b, tol)
    return (x, {"residual": res}) if return_info else x
