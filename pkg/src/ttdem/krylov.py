"""Inner linear solvers for the Newton/Schur systems.

BiCGSTAB is right-preconditioned so the stopping test tracks the true
residual of the original system; the reported residual is always recomputed
explicitly from the returned iterate, never taken from the recurrence.
ILU(0) keeps the zero-fill pattern of the input matrix; its factorization and
triangular solves run as compiled kernels because they are on the hot path of
every Newton iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numba import njit


@dataclass
class LinearOperator:
    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_matrix(cls, a) -> "LinearOperator":
        if sp.issparse(a):
            return cls(a.shape[0], lambda x: a @ x)
        arr = np.asarray(a)
        return cls(arr.shape[0], lambda x: arr @ x)


@dataclass
class SolveReport:
    iterations: int = 0
    relative_residual: float = np.inf
    converged: bool = False
    wall_time: float = 0.0
    precond_build_time: float = 0.0
    flags: list[str] = field(default_factory=list)


class BreakdownError(RuntimeError):
    pass


def bicgstab(a: LinearOperator, b: np.ndarray, preconditioner=None, tol: float = 1e-6,
             max_iter: int = 1000, x0: np.ndarray | None = None, seed: int = 0):
    """Right-preconditioned BiCGSTAB.

    On (near-)breakdown of the recurrence the solve restarts once from the
    current iterate with a seeded random perturbation of the shadow vector;
    a second breakdown raises BreakdownError.
    """
    if b.shape[0] != a.dim:
        raise ValueError("dimension mismatch")
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    precond = preconditioner if preconditioner is not None else (lambda z: z)
    norm_b = np.linalg.norm(b)
    report = SolveReport()
    if norm_b == 0.0:
        report.converged = True
        report.relative_residual = 0.0
        report.wall_time = time.perf_counter() - t0
        return np.zeros_like(b), report

    rng = np.random.default_rng(seed)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - a.apply(x) if x.any() else b.copy()
    r_shadow = r.copy()
    rho_prev = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    restarted = False
    eps_break = 1e-30
    it = 0
    while it < max_iter:
        rho = r_shadow @ r
        if abs(rho) < eps_break or (it > 0 and abs(omega) < eps_break):
            if restarted:
                raise BreakdownError("bicgstab breakdown after restart")
            r = b - a.apply(x)
            r_shadow = r + 1e-8 * np.linalg.norm(r) * rng.standard_normal(r.shape)
            rho_prev = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            restarted = True
            report.flags.append("restarted")
            continue
        beta = (rho / rho_prev) * (alpha / omega) if it > 0 else 0.0
        p = r + beta * (p - omega * v)
        p_hat = precond(p)
        v = a.apply(p_hat)
        denom = r_shadow @ v
        if abs(denom) < eps_break:
            if restarted:
                raise BreakdownError("bicgstab breakdown after restart")
            r = b - a.apply(x)
            r_shadow = r + 1e-8 * np.linalg.norm(r) * rng.standard_normal(r.shape)
            rho_prev = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            restarted = True
            report.flags.append("restarted")
            continue
        alpha = rho / denom
        s = r - alpha * v
        x = x + alpha * p_hat
        it += 1
        if np.linalg.norm(s) / norm_b <= tol:
            r = s
            rho_prev = rho
            break
        s_hat = precond(s)
        t = a.apply(s_hat)
        tt = t @ t
        if tt < eps_break:
            r = s
            break
        omega = (t @ s) / tt
        x = x + omega * s_hat
        r = s - omega * t
        rho_prev = rho
        if not np.all(np.isfinite(x)):
            raise BreakdownError("bicgstab produced non-finite iterate")
        if np.linalg.norm(r) / norm_b <= tol:
            break

    true_res = float(np.linalg.norm(b - a.apply(x)) / norm_b)
    report.iterations = it
    report.relative_residual = true_res
    report.converged = true_res <= 10.0 * tol
    report.wall_time = time.perf_counter() - t0
    return x, report


# ---------------------------------------------------------------------------
# ILU(0)

@njit(cache=True)
def _ilu0_factor(indptr, indices, data, diag_ptr, shift):
    status = 0
    n = indptr.shape[0] - 1
    for i in range(n):
        row_start = indptr[i]
        row_end = indptr[i + 1]
        for idx_k in range(row_start, row_end):
            k = indices[idx_k]
            if k >= i:
                break
            akk = data[diag_ptr[k]]
            if abs(akk) < 1e-300:
                akk = shift
                status = 1
            aik = data[idx_k] / akk
            data[idx_k] = aik
            # subtract aik * (U part of row k), restricted to row i's pattern
            for idx_j in range(diag_ptr[k] + 1, indptr[k + 1]):
                j = indices[idx_j]
                lo = row_start
                hi = row_end
                while lo < hi:
                    mid = (lo + hi) // 2
                    if indices[mid] < j:
                        lo = mid + 1
                    else:
                        hi = mid
                if lo < row_end and indices[lo] == j:
                    data[lo] -= aik * data[idx_j]
        if abs(data[diag_ptr[i]]) < 1e-300:
            data[diag_ptr[i]] = shift
            status = 1
    return status


@njit(cache=True)
def _ilu0_solve(indptr, indices, data, diag_ptr, b, out):
    n = indptr.shape[0] - 1
    # forward: L y = b with unit diagonal
    for i in range(n):
        acc = b[i]
        for idx in range(indptr[i], diag_ptr[i]):
            acc -= data[idx] * out[indices[idx]]
        out[i] = acc
    # backward: U x = y
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for idx in range(diag_ptr[i] + 1, indptr[i + 1]):
            acc -= data[idx] * out[indices[idx]]
        out[i] = acc / data[diag_ptr[i]]


class Ilu0Preconditioner:
    """Zero-fill incomplete LU on the matrix's own sparsity pattern."""

    def __init__(self, matrix: sp.csr_matrix):
        csr = matrix.tocsr().sorted_indices()
        n = csr.shape[0]
        diag = csr.diagonal()
        if np.all(diag == 0.0):
            raise ValueError("matrix has empty diagonal")
        self.indptr = csr.indptr.copy()
        self.indices = csr.indices.copy()
        self.data = csr.data.astype(np.float64).copy()
        self.diag_ptr = np.empty(n, dtype=self.indptr.dtype)
        for i in range(n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            pos = lo + np.searchsorted(self.indices[lo:hi], i)
            if pos >= hi or self.indices[pos] != i:
                raise ValueError("structural zero on the diagonal")
            self.diag_ptr[i] = pos
        shift = 1e-8 * float(np.max(np.abs(diag)))
        status = _ilu0_factor(self.indptr, self.indices, self.data, self.diag_ptr, shift)
        self.shifted = bool(status)
        self.n = n

    def apply(self, z: np.ndarray) -> np.ndarray:
        out = np.empty_like(z, dtype=np.float64)
        _ilu0_solve(self.indptr, self.indices, self.data, self.diag_ptr,
                    z.astype(np.float64), out)
        return out

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.apply(z)


def ilu0_build(matrix: sp.csr_matrix) -> Ilu0Preconditioner:
    return Ilu0Preconditioner(matrix)


# ---------------------------------------------------------------------------
# Dense direct oracle

def dense_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pivoted LU solve with one step of iterative refinement; test/oracle path."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] > 2000:
        raise ValueError("dense_solve is capped at 2000 rows")
    lu, piv = scipy.linalg.lu_factor(a)
    if np.any(np.abs(np.diag(lu)) < 1e-300):
        raise np.linalg.LinAlgError("singular matrix")
    x = scipy.linalg.lu_solve((lu, piv), b)
    x = x + scipy.linalg.lu_solve((lu, piv), b - a @ x)
    return x
