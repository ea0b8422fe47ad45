"""SPD sparse solves.

The default backend is a sparse LU (SuperLU) run in symmetric mode with
diagonal pivoting, which for an SPD matrix reproduces a Cholesky
factorization up to scaling; a non-positive pivot therefore flags a matrix
that is not positive definite.  A Jacobi-preconditioned conjugate gradient
is available as a fallback.
"""

from __future__ import annotations

import logging
import os

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DEBUG_CHECKS = os.environ.get("PHASEFRAC_DEBUG", "") not in ("", "0")


class SolverError(RuntimeError):
    """Linear solve failure, tagged with the subproblem that issued it."""

    def __init__(self, message: str, subproblem: str = "linear"):
        super().__init__(f"[{subproblem}] {message}")
        self.subproblem = subproblem


def solve_spd(A, b, tol: float = 1e-12, method: str = "direct", subproblem: str = "linear", check: bool | None = None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Returns ``x`` with ``||A x - b|| <= tol ||b||`` (direct solves apply up to
    three steps of iterative refinement to get there).
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if method == "direct":
        x = _solve_direct(A, b, tol, subproblem)
    elif method == "cg":
        x = conjugate_gradient(A, b, tol=tol, subproblem=subproblem)
    else:
        raise ValueError(f"unknown method {method!r}")
    if check if check is not None else DEBUG_CHECKS:
        bn = np.linalg.norm(b)
        res = np.linalg.norm(A @ x - b)
        if res > tol * bn:
            raise SolverError(f"residual {res:.3e} exceeds {tol:.1e} * |b| = {tol * bn:.3e}", subproblem)
    return x


def _solve_direct(A, b, tol, subproblem):
    try:
        lu = spla.splu(
            A.tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # exactly singular
        raise SolverError(f"factorization failed: {exc}", subproblem) from exc
    if np.any(lu.U.diagonal() <= 0.0):
        raise SolverError("non-positive pivot: matrix is not positive definite", subproblem)
    x = lu.solve(b)
    bn = np.linalg.norm(b)
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= tol * bn:
            break
        x = x + lu.solve(r)
    return x


def conjugate_gradient(A, b, tol: float = 1e-12, maxiter: int | None = None, subproblem: str = "linear"):
    """Jacobi-preconditioned CG with breakdown detection."""
    n = A.shape[0]
    maxiter = maxiter or 10 * n
    d = A.diagonal()
    if np.any(d <= 0.0):
        raise SolverError("non-positive diagonal entry", subproblem)
    dinv = 1.0 / d
    x = np.zeros(n)
    r = b.copy()
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0.0:
            raise SolverError("negative curvature in CG", subproblem)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bn:
            # the recursive residual drifts; confirm with the true one and restart if needed
            r = b - A @ x
            if np.linalg.norm(r) <= tol * bn:
                return x
            z = dinv * r
            p = z.copy()
            rz = r @ z
            continue
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach tol {tol:.1e} in {maxiter} iterations", subproblem)
