"""Alternating least-squares solves in TT format and approximate operator inversion.

tt_solve_als performs one-site Galerkin sweeps for A x = b with both operator
and unknown in TT form: each core update solves the projected local system,
ranks grow by a residual-guided enrichment while the sampled residual estimate
sits above the target, and a warm-start guess turns repeated solves with
slowly-changing operators into one or two quick sweeps.

tt_invert_als recasts inversion A X = I as a linear solve for vec(X) under the
levelwise Kronecker operator kron(A, I) and reshapes the solution back into a
TT matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .core import TtMatrix, TtTensor, right_orthogonalize, tt_ones, tt_round


@dataclass
class AlsStats:
    sweeps: float = 0.0         # half-sweeps count 0.5
    residual: float = np.inf
    converged: bool = False
    rank_capped: bool = False
    low_quality: bool = False
    local_solves: int = 0


def kron_with_identity(a: TtMatrix) -> TtMatrix:
    """Levelwise kron(A, I): the operator mapping vec(X) to vec(A X)."""
    cores = []
    for g in a.cores:
        r0, ni, nj, r1 = g.shape
        eye = np.eye(nj)
        core = np.einsum("aijb,lm->ailjmb", g, eye)
        cores.append(core.reshape(r0, ni * nj, nj * nj, r1))
    return TtMatrix(cores)


def identity_vec_tt(mode_sizes) -> TtTensor:
    """vec(I) over paired (row, col) level indices; all ranks 1."""
    return TtTensor([np.eye(n).reshape(1, n * n, 1) for n in mode_sizes])


def _matvec_cores(a: TtMatrix, x: TtTensor) -> TtTensor:
    """Exact TT cores of A x (ranks multiply); used for sampled residuals."""
    cores = []
    for ga, gx in zip(a.cores, x.cores):
        z = np.einsum("anmA,cmC->acnAC", ga, gx)
        ra, rx, n, rA, rX = z.shape
        cores.append(z.reshape(ra * rx, n, rA * rX))
    return TtTensor(cores)


def _local_operator(psi_l, a_core, psi_r) -> np.ndarray:
    tmp = np.einsum("xaX,anmb->xnXmb", psi_l, a_core, optimize=True)
    b = np.einsum("xnXmb,ybY->xnyXmY", tmp, psi_r, optimize=True)
    dim = b.shape[0] * b.shape[1] * b.shape[2]
    return b.reshape(dim, dim)


def _local_rhs(phi_l, b_core, phi_r) -> np.ndarray:
    return np.einsum("fx,fnF,Fy->xny", phi_l, b_core, phi_r, optimize=True).reshape(-1)


def _psi_step_left(psi, x_core, a_core) -> np.ndarray:
    return np.einsum("xaX,xnY,anmA,Xmz->YAz", psi, x_core, a_core, x_core,
                     optimize=True)


def _psi_step_right(psi, x_core, a_core) -> np.ndarray:
    return np.einsum("YAz,xnY,anmA,Xmz->xaX", psi, x_core, a_core, x_core,
                     optimize=True)


def _phi_step_left(phi, b_core, x_core) -> np.ndarray:
    return np.einsum("fx,fnF,xnX->FX", phi, b_core, x_core, optimize=True)


def _phi_step_right(phi, b_core, x_core) -> np.ndarray:
    return np.einsum("FX,fnF,xnX->fx", phi, b_core, x_core, optimize=True)


class _LocalSystem:
    """Projected local system at one core; dense only while it stays small."""

    def __init__(self, psi_l, a_core, psi_r, direct_limit: int):
        self.psi_l = psi_l
        self.a_core = a_core
        self.psi_r = psi_r
        self.shape3 = (psi_l.shape[0], a_core.shape[1], psi_r.shape[0])
        self.dim = int(np.prod(self.shape3))
        self.direct = self.dim <= direct_limit
        self.mat = _local_operator(psi_l, a_core, psi_r) if self.direct else None

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.mat is not None:
            return self.mat @ v
        x, n, y = self.shape3
        w = v.reshape(x, n, y)
        t = np.einsum("XmY,ybY->Xmyb", w, self.psi_r, optimize=True)
        t = np.einsum("anmb,Xmyb->aXny", self.a_core, t, optimize=True)
        out = np.einsum("xaX,aXny->xny", self.psi_l, t, optimize=True)
        return out.reshape(-1)

    def solve(self, rhs: np.ndarray, x0: np.ndarray) -> np.ndarray:
        if self.direct:
            if not np.all(np.isfinite(self.mat)):
                return x0
            try:
                c, low = scipy.linalg.cho_factor(self.mat)
                sol = scipy.linalg.cho_solve((c, low), rhs)
            except (ValueError, np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                sol = np.linalg.lstsq(self.mat, rhs, rcond=None)[0]
        else:
            op = scipy.sparse.linalg.LinearOperator((self.dim, self.dim),
                                                    matvec=self.matvec)
            with np.errstate(divide="ignore", invalid="ignore"):
                sol, _ = scipy.sparse.linalg.cg(op, rhs, x0=x0, rtol=1e-9,
                                                maxiter=150)
        return sol if np.all(np.isfinite(sol)) else x0


def tt_solve_als(a: TtMatrix, b: TtTensor, eps: float, r_max: int,
                 guess: TtTensor | None = None, rng=None, max_sweeps: int = 30,
                 kick: int = 2, n_validation: int = 1000,
                 direct_limit: int = 1000) -> tuple[TtTensor, AlsStats]:
    """Solve A x = b for x in TT form by alternating Galerkin core updates."""
    if a.row_sizes != a.col_sizes:
        raise ValueError("operator must be square")
    modes = b.mode_sizes
    if a.col_sizes != modes:
        raise ValueError("operator and right-hand side sizes do not match")
    rng = np.random.default_rng(0) if rng is None else rng
    d = len(modes)
    stats = AlsStats()

    x_cores = ([c.copy() for c in guess.cores] if guess is not None
               else [c.copy() for c in tt_ones(modes).cores])
    x_cores = right_orthogonalize(x_cores)

    psi = [None] * (d + 1)
    phi = [None] * (d + 1)
    psi[0] = np.ones((1, 1, 1))
    psi[d] = np.ones((1, 1, 1))
    phi[0] = np.ones((1, 1))
    phi[d] = np.ones((1, 1))
    for k in range(d - 1, 0, -1):
        psi[k] = _psi_step_right(psi[k + 1], x_cores[k], a.cores[k])
        phi[k] = _phi_step_right(phi[k + 1], b.cores[k], x_cores[k])

    norm_b = b.norm()
    n_total = float(np.prod(modes))

    def sampled_residual() -> float:
        z = _matvec_cores(a, TtTensor(x_cores))
        idx = np.column_stack([rng.integers(0, n, size=n_validation) for n in modes])
        res = z.eval_batch(idx) - b.eval_batch(idx)
        rms = float(np.sqrt(np.mean(res**2)))
        return rms * np.sqrt(n_total) / max(norm_b, 1e-300)

    def half_sweep_l2r(grow: bool) -> None:
        for k in range(d):
            system = _LocalSystem(psi[k], a.cores[k], psi[k + 1], direct_limit)
            rhs = _local_rhs(phi[k], b.cores[k], phi[k + 1])
            sol = system.solve(rhs, x_cores[k].reshape(-1))
            stats.local_solves += 1
            r0, n, r1 = x_cores[k].shape
            if k < d - 1:
                unfold = sol.reshape(r0 * n, r1)
                kick_eff = min(kick, r_max - r1, r0 * n - r1) if grow else 0
                if kick_eff > 0:
                    res_loc = (system.matvec(sol) - rhs).reshape(r0 * n, r1)
                    u, _, _ = np.linalg.svd(res_loc, full_matrices=False)
                    unfold = np.hstack([unfold, u[:, :kick_eff]])
                q, rfac = np.linalg.qr(unfold)
                x_cores[k] = q.reshape(r0, n, q.shape[1])
                x_cores[k + 1] = np.tensordot(rfac[:, :r1], x_cores[k + 1],
                                              axes=([1], [0]))
                psi[k + 1] = _psi_step_left(psi[k], x_cores[k], a.cores[k])
                phi[k + 1] = _phi_step_left(phi[k], b.cores[k], x_cores[k])
            else:
                x_cores[k] = sol.reshape(r0, n, r1)

    def half_sweep_r2l(grow: bool) -> None:
        for k in range(d - 1, -1, -1):
            system = _LocalSystem(psi[k], a.cores[k], psi[k + 1], direct_limit)
            rhs = _local_rhs(phi[k], b.cores[k], phi[k + 1])
            sol = system.solve(rhs, x_cores[k].reshape(-1))
            stats.local_solves += 1
            r0, n, r1 = x_cores[k].shape
            if k > 0:
                unfold = sol.reshape(r0, n * r1).T
                kick_eff = min(kick, r_max - r0, n * r1 - r0) if grow else 0
                if kick_eff > 0:
                    res_loc = (system.matvec(sol) - rhs).reshape(r0, n * r1).T
                    u, _, _ = np.linalg.svd(res_loc, full_matrices=False)
                    unfold = np.hstack([unfold, u[:, :kick_eff]])
                q, rfac = np.linalg.qr(unfold)
                x_cores[k] = q.T.reshape(q.shape[1], n, r1)
                x_cores[k - 1] = np.tensordot(x_cores[k - 1], rfac[:, :r0].T,
                                              axes=([2], [0]))
                psi[k] = _psi_step_right(psi[k + 1], x_cores[k], a.cores[k])
                phi[k] = _phi_step_right(phi[k + 1], b.cores[k], x_cores[k])
            else:
                x_cores[k] = sol.reshape(r0, n, r1)

    best = None
    best_res = np.inf
    history: list[float] = []
    if guess is not None:
        best_res = sampled_residual()
        best = [c.copy() for c in x_cores]
        history.append(best_res)
    done = False
    max_sweeps = 0 if best_res <= eps else max_sweeps
    for sweep in range(1, max_sweeps + 1):
        for half in (half_sweep_l2r, half_sweep_r2l):
            half(best_res > eps)
            if not all(np.all(np.isfinite(c)) for c in x_cores):
                done = True
                break
            res = sampled_residual()
            history.append(res)
            stats.sweeps += 0.5
            if res < best_res:
                best_res = res
                best = [c.copy() for c in x_cores]
            if res <= eps:
                done = True
                break
        if done:
            break
        if len(history) >= 3 and history[-1] > 0.98 * min(history[-3:-1]):
            break

    result = TtTensor(best if best is not None else x_cores)
    rounded = tt_round(result, 0.3 * eps)
    z = _matvec_cores(a, rounded)
    idx = np.column_stack([rng.integers(0, n, size=n_validation) for n in modes])
    res_round = z.eval_batch(idx) - b.eval_batch(idx)
    res_round = float(np.sqrt(np.mean(res_round**2))) * np.sqrt(n_total) / max(norm_b, 1e-300)
    if res_round <= max(best_res, eps):
        result = rounded
        best_res = min(best_res, res_round)
    stats.residual = best_res
    stats.converged = best_res <= eps
    stats.rank_capped = (not stats.converged) and max(result.ranks, default=1) >= r_max
    stats.low_quality = (not stats.converged) and best_res > 10.0 * eps
    return result, stats


def tt_invert_als(a: TtMatrix, eps: float, r_max: int,
                  guess: TtMatrix | None = None, rng=None,
                  **kwargs) -> tuple[TtMatrix, AlsStats]:
    """Approximate inverse of a square TT operator.

    Solves min ||A X - I||_F through per-core linear solves on vec(X); the
    sampled stopping estimate is ||A X - I||_F / sqrt(N). A low_quality flag
    (residual above 10x eps at the rank cap) marks inverses that are still
    usable as preconditioners but not as direct solvers.
    """
    if a.row_sizes != a.col_sizes:
        raise ValueError("operator must be square")
    op = kron_with_identity(a)
    b = identity_vec_tt(a.row_sizes)
    x0 = guess.as_paired_tensor() if guess is not None else None
    x, stats = tt_solve_als(op, b, eps, r_max, guess=x0, rng=rng, **kwargs)
    return TtMatrix.from_paired_tensor(x, a.row_sizes, a.col_sizes), stats
