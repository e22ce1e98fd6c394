"""Primal-dual interior-point solver for the cone-constrained contact QP.

The QP min 0.5 g^T N g + r^T g over the friction cones is handled through
2 Nc smooth inequality constraints per the split

    f_i      = 0.5 (g_{i,1}^2 + g_{i,2}^2 - mu_i^2 g_{i,n}^2)   (cone)
    f_{Nc+i} = -g_{i,n}                                          (positivity)

with multipliers lam > 0 kept strictly positive and iterates strictly
feasible (f < 0). Each Newton step eliminates the multiplier block through
the Schur complement S = N + M_hat - B E^{-1} C, whose corrections to N are
purely 3x3 block-diagonal, so S always shares N's sparsity pattern.

Sign conventions follow the self-consistent reading lam_i = 1/(t * (-f_i)) > 0
with centering -lam_i f_i = 1/t. The Hessian contribution M_hat uses the exact
per-contact diag(-mu^2, 1, 1) * lam form by default; the positive-diagonal
variant diag(+mu^2, 1, 1) * lam is selectable and the solver falls back to it
if the exact form ever produces an indefinite Schur matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import BlockSparseMatrix, CcpProblem
from .krylov import SolveReport, dense_solve


@dataclass
class PdipOptions:
    """Interior-point controls.

    Termination measures are scale-aware: the surrogate gap is averaged per
    constraint (eta / 2Nc <= tol_gap) and dual feasibility uses the infinity
    norm relative to the problem's force scale, so the iteration-count behavior
    is size-independent.
    """
    tol_gap: float = 1e-4
    tol_feas: float = 1e-4
    t_growth: float = 10.0
    max_newton: int = 300
    line_search_slope: float = 0.01
    backtrack: float = 0.5
    boundary_fraction: float = 0.99
    centering_factor: float = 0.5
    hessian_mode: str = "exact"      # "exact" | "positive"
    mu_floor: float = 1e-3           # barrier-only effective friction for mu ~ 0
    min_step: float = 1e-10
    preset_normal_impulse: float = 1.0


@dataclass
class PdipIterate:
    gamma: np.ndarray
    lam: np.ndarray
    t: float


@dataclass
class PdipTraceRow:
    iteration: int
    t: float
    eta: float
    r_gamma_norm: float
    alpha: float
    inner_iterations: int
    inner_residual: float
    precompute_time: float
    solve_time: float
    wall_time: float


@dataclass
class PdipStats:
    converged: bool = False
    newton_iterations: int = 0
    eta: float = np.inf
    r_gamma_norm: float = np.inf
    objective: float = np.inf
    trace: list[PdipTraceRow] = field(default_factory=list)
    phase_gaps: list[float] = field(default_factory=list)   # eta at each t update
    total_inner_iterations: int = 0
    precompute_time: float = 0.0
    solve_time: float = 0.0
    flags: list[str] = field(default_factory=list)


class NewtonBlocks:
    """Per-contact blocks of the 5Nc x 5Nc KKT Newton system."""

    def __init__(self, m_hat: np.ndarray, grad_cone: np.ndarray, lam: np.ndarray,
                 f: np.ndarray, r_gamma: np.ndarray, r_lam: np.ndarray):
        self.m_hat = m_hat            # (Nc, 3) diagonal of M_hat
        self.grad_cone = grad_cone    # (Nc, 3) gradient of the cone constraint
        self.lam = lam                # (2 Nc)
        self.f = f                    # (2 Nc)
        self.e = -f                   # (2 Nc) diagonal of E, positive when feasible
        self.r_gamma = r_gamma        # (3 Nc)
        self.r_lam = r_lam            # (2 Nc)

    @property
    def n_contacts(self) -> int:
        return self.m_hat.shape[0]

    def dense_kkt(self, n_matrix: BlockSparseMatrix) -> tuple[np.ndarray, np.ndarray]:
        """Assemble the full 5Nc x 5Nc system and its right-hand side (test oracle path)."""
        nc = self.n_contacts
        n3, n2 = 3 * nc, 2 * nc
        kkt = np.zeros((n3 + n2, n3 + n2))
        kkt[:n3, :n3] = n_matrix.dense()
        kkt[:n3, :n3] += np.diag(self.m_hat.reshape(-1))
        grad = np.zeros((n2, n3))    # rows of grad f
        for i in range(nc):
            grad[i, 3 * i:3 * i + 3] = self.grad_cone[i]
            grad[nc + i, 3 * i] = -1.0
        kkt[:n3, n3:] = grad.T                               # B
        kkt[n3:, :n3] = -np.diag(self.lam) @ grad            # C
        kkt[n3:, n3:] = -np.diag(self.f)                     # E
        rhs = np.concatenate([-self.r_gamma, -self.r_lam])
        return kkt, rhs


class SchurSystem:
    """S = N + (block-diagonal corrections); shares N's block sparsity exactly."""

    def __init__(self, n_matrix: BlockSparseMatrix, corrections: np.ndarray, rhs: np.ndarray):
        self.n_matrix = n_matrix
        self.corrections = corrections   # (Nc, 3, 3)
        self.rhs = rhs
        self._csr = None

    @property
    def dim(self) -> int:
        return self.n_matrix.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.n_matrix.matvec(x)
        xb = x.reshape(-1, 3)
        y += np.einsum("nij,nj->ni", self.corrections, xb).reshape(-1)
        return y

    def to_csr(self):
        if self._csr is None:
            csr = self.n_matrix.to_csr().copy()
            nc = self.corrections.shape[0]
            rows = np.repeat(3 * np.arange(nc), 9) + np.tile(np.repeat(np.arange(3), 3), nc)
            cols = np.repeat(3 * np.arange(nc), 9) + np.tile(np.tile(np.arange(3), 3), nc)
            import scipy.sparse as sp
            csr = (csr + sp.coo_matrix((self.corrections.reshape(-1), (rows, cols)),
                                       shape=csr.shape)).tocsr()
            self._csr = csr
        return self._csr

    def dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def block_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, blocks) of S in block coordinates, diagonal corrections folded in."""
        blocks = self.n_matrix.blocks.copy()
        rows = self.n_matrix.rows
        cols = self.n_matrix.cols
        for i in range(self.corrections.shape[0]):
            pos = self.n_matrix.index[(i, i)]
            blocks[pos] = blocks[pos] + self.corrections[i]
        return rows, cols, blocks


def effective_mu(problem: CcpProblem, options: PdipOptions) -> np.ndarray:
    return np.maximum(problem.mu, options.mu_floor)


def eval_constraints(gamma: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, bool]:
    """Constraint vector f (cone block then positivity block) and strict feasibility flag."""
    g = gamma.reshape(-1, 3)
    f_cone = 0.5 * (g[:, 1] ** 2 + g[:, 2] ** 2 - mu**2 * g[:, 0] ** 2)
    f_pos = -g[:, 0]
    f = np.concatenate([f_cone, f_pos])
    return f, bool(np.all(f < 0.0))


def _cone_gradients(gamma: np.ndarray, mu: np.ndarray) -> np.ndarray:
    g = gamma.reshape(-1, 3)
    grad = g.copy()
    grad[:, 0] = -(mu**2) * g[:, 0]
    return grad


def kkt_residual(iterate: PdipIterate, problem: CcpProblem,
                 mu: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """(r_gamma, r_lambda, surrogate gap eta) at the current iterate."""
    mu = problem.mu if mu is None else mu
    nc = problem.n_contacts
    f, _ = eval_constraints(iterate.gamma, mu)
    grad = _cone_gradients(iterate.gamma, mu)
    lam_c = iterate.lam[:nc]
    lam_p = iterate.lam[nc:]
    r_gamma = problem.N.matvec(iterate.gamma) + problem.r
    rg = r_gamma.reshape(nc, 3)
    rg += lam_c[:, None] * grad
    rg[:, 0] -= lam_p
    r_lam = -iterate.lam * f - 1.0 / iterate.t
    eta = float(-(f @ iterate.lam))
    return r_gamma, r_lam, eta


def assemble_newton(iterate: PdipIterate, problem: CcpProblem,
                    options: PdipOptions | None = None,
                    hessian_mode: str | None = None) -> NewtonBlocks:
    options = options or PdipOptions()
    mode = hessian_mode or options.hessian_mode
    mu = effective_mu(problem, options)
    nc = problem.n_contacts
    f, feasible = eval_constraints(iterate.gamma, mu)
    if not feasible:
        raise ValueError("Newton assembly requires a strictly feasible iterate")
    grad = _cone_gradients(iterate.gamma, mu)
    lam_c = iterate.lam[:nc]
    sign = -1.0 if mode == "exact" else 1.0
    m_hat = np.empty((nc, 3))
    m_hat[:, 0] = sign * mu**2 * lam_c
    m_hat[:, 1] = lam_c
    m_hat[:, 2] = lam_c
    r_gamma, r_lam, _ = kkt_residual(iterate, problem, mu)
    return NewtonBlocks(m_hat, grad, iterate.lam.copy(), f, r_gamma, r_lam)


def schur_reduce(blocks: NewtonBlocks, n_matrix: BlockSparseMatrix) -> SchurSystem:
    """Eliminate the multiplier block: S = N + M_hat - B E^{-1} C with reduced RHS."""
    nc = blocks.n_contacts
    e_c = blocks.e[:nc]
    e_p = blocks.e[nc:]
    if np.any(blocks.e < 1e-14):
        raise FloatingPointError("constraint value too close to the boundary")
    lam_c = blocks.lam[:nc]
    lam_p = blocks.lam[nc:]
    corr = np.zeros((nc, 3, 3))
    idx = np.arange(3)
    corr[:, idx, idx] = blocks.m_hat
    corr += (lam_c / e_c)[:, None, None] * np.einsum("ni,nj->nij", blocks.grad_cone,
                                                     blocks.grad_cone)
    corr[:, 0, 0] += lam_p / e_p
    rhs = (-blocks.r_gamma).reshape(nc, 3).copy()
    rhs += (blocks.r_lam[:nc] / e_c)[:, None] * blocks.grad_cone
    rhs[:, 0] -= blocks.r_lam[nc:] / e_p
    return SchurSystem(n_matrix, corr, rhs.reshape(-1))


def recover_multiplier_step(blocks: NewtonBlocks, d_gamma: np.ndarray) -> np.ndarray:
    """Back-substitute: d_lam = E^{-1}(-r_lam - C d_gamma)."""
    nc = blocks.n_contacts
    dg = d_gamma.reshape(nc, 3)
    lam_c = blocks.lam[:nc]
    lam_p = blocks.lam[nc:]
    d_lam = np.empty(2 * nc)
    d_lam[:nc] = (-blocks.r_lam[:nc]
                  + lam_c * np.einsum("ni,ni->n", blocks.grad_cone, dg)) / blocks.e[:nc]
    d_lam[nc:] = (-blocks.r_lam[nc:] - lam_p * dg[:, 0]) / blocks.e[nc:]
    return d_lam


def _residual_norm(r_gamma: np.ndarray, r_lam: np.ndarray) -> float:
    return float(np.sqrt(r_gamma @ r_gamma + r_lam @ r_lam))


def line_search(iterate: PdipIterate, d_gamma: np.ndarray, d_lam: np.ndarray,
                problem: CcpProblem, options: PdipOptions,
                mu: np.ndarray | None = None) -> float:
    """Backtracking step: keep lam > 0 and f < 0, then Armijo decrease on ||r_t||.

    Returns the accepted step or raises FloatingPointError below options.min_step.
    """
    mu = effective_mu(problem, options) if mu is None else mu
    if not (np.all(np.isfinite(d_gamma)) and np.all(np.isfinite(d_lam))):
        raise FloatingPointError("non-finite Newton direction")
    neg = d_lam < 0.0
    alpha_max = 1.0
    if np.any(neg):
        alpha_max = min(1.0, float(np.min(-iterate.lam[neg] / d_lam[neg])))
    alpha = options.boundary_fraction * alpha_max
    r_g, r_l, _ = kkt_residual(iterate, problem, mu)
    base = _residual_norm(r_g, r_l)
    while alpha >= options.min_step:
        gamma_new = iterate.gamma + alpha * d_gamma
        _, feasible = eval_constraints(gamma_new, mu)
        if feasible:
            trial = PdipIterate(gamma_new, iterate.lam + alpha * d_lam, iterate.t)
            r_g, r_l, _ = kkt_residual(trial, problem, mu)
            if _residual_norm(r_g, r_l) <= (1.0 - options.line_search_slope * alpha) * base:
                return alpha
        alpha *= options.backtrack
    raise FloatingPointError("line search step collapsed")


def dual_polish(gamma: np.ndarray, problem: CcpProblem, mu: np.ndarray,
                lam_min: float = 1e-12) -> np.ndarray:
    """Best multipliers for a frozen primal point: per-contact nonnegative least squares.

    Minimizes || (N gamma + r) + grad_f^T lam || over lam >= lam_min contact by
    contact (two variables, three equations). Near degenerate cone tips the
    central path forces gamma_n below the Schur boundary guard, while a small
    off-path multiplier choice already certifies stationarity; this recovers it.
    """
    nc = problem.n_contacts
    v = (problem.N.matvec(gamma) + problem.r).reshape(nc, 3)
    g = _cone_gradients(gamma, mu)
    # normal equations of min ||v + lc*g - lp*e_n||^2 in (lc, lp)
    a11 = np.einsum("ni,ni->n", g, g)
    a12 = -g[:, 0]
    a22 = np.ones(nc)
    b1 = -np.einsum("ni,ni->n", g, v)
    b2 = v[:, 0]
    det = a11 * a22 - a12 * a12
    safe = det > 1e-300
    lc = np.where(safe, (b1 * a22 - a12 * b2) / np.where(safe, det, 1.0), lam_min)
    lp = np.where(safe, (a11 * b2 - a12 * b1) / np.where(safe, det, 1.0), lam_min)
    # clipped coordinate fallbacks when the unconstrained optimum leaves the quadrant
    neg_c = lc < lam_min
    lc = np.where(neg_c, lam_min, lc)
    lp = np.where(neg_c, np.maximum(b2 - a12 * lam_min, lam_min), lp)
    neg_p = lp < lam_min
    lp = np.where(neg_p, lam_min, lp)
    lc_alt = np.where(a11 > 1e-300, (b1 - a12 * lam_min) / np.maximum(a11, 1e-300), lam_min)
    lc = np.where(neg_p, np.maximum(lc_alt, lam_min), lc)
    return np.concatenate([lc, lp])


def _pull_back_from_boundary(gamma: np.ndarray, mu: np.ndarray,
                             e_safe: float = 1e-12) -> np.ndarray:
    """Nudge tip-collapsed contacts inward so every constraint keeps -f >= e_safe.

    The perturbation is O(1e-6) impulse units, far below solver tolerances.
    """
    g = gamma.reshape(-1, 3).copy()
    gn_floor = np.sqrt(2.0 * e_safe) / mu
    g[:, 0] = np.maximum(g[:, 0], gn_floor)
    gt = np.linalg.norm(g[:, 1:], axis=1)
    limit = 0.9 * mu * g[:, 0]
    scale = np.where(gt > limit, limit / np.maximum(gt, 1e-300), 1.0)
    g[:, 1:] *= scale[:, None]
    return g.reshape(-1)


def warm_start_gamma(previous: dict | None, keys: list,
                     preset: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Strictly feasible start: tangential impulses zero, normal from persistence or preset.

    Persisted values are floored at a small fraction of the preset: contacts
    that ended the previous step separated would otherwise restart exactly at
    the degenerate cone tip, where the first Newton direction is unusable.
    """
    nc = len(keys)
    gamma = np.zeros(3 * nc)
    floor = 1e-2 * preset
    for i, key in enumerate(keys):
        value = preset
        if previous is not None and key in previous:
            value = max(float(previous[key]), floor)
        gamma[3 * i] = value
    lam = np.ones(2 * nc)
    return gamma, lam


def dense_schur_solver(schur: SchurSystem, seed: int = 0) -> tuple[np.ndarray, SolveReport]:
    t0 = time.perf_counter()
    x = dense_solve(schur.dense(), schur.rhs)
    rep = SolveReport(iterations=1, relative_residual=0.0, converged=True,
                      wall_time=time.perf_counter() - t0)
    res = np.linalg.norm(schur.rhs - schur.matvec(x))
    scale = np.linalg.norm(schur.rhs)
    rep.relative_residual = float(res / scale) if scale > 0 else 0.0
    return x, rep


SchurSolverFn = Callable[[SchurSystem, int], tuple[np.ndarray, SolveReport]]


def pdip_solve(problem: CcpProblem, warm_start: tuple[np.ndarray, np.ndarray] | None = None,
               linear_solver: SchurSolverFn | None = None,
               options: PdipOptions | None = None) -> tuple[np.ndarray, np.ndarray, PdipStats]:
    """Run the interior-point iteration; returns (gamma, lambda, stats).

    The barrier weight t is increased by t_growth once the current system is
    centered (||r_t|| small relative to the m/t gap scale); termination needs
    both the surrogate gap and the dual-feasibility residual below tolerance.
    """
    options = options or PdipOptions()
    solver = linear_solver or dense_schur_solver
    stats = PdipStats()
    nc = problem.n_contacts
    if nc == 0:
        stats.converged = True
        stats.eta = 0.0
        stats.r_gamma_norm = 0.0
        stats.objective = 0.0
        return np.zeros(0), np.zeros(0), stats
    mu = effective_mu(problem, options)
    m = 2 * nc

    if warm_start is None:
        gamma, lam = warm_start_gamma(None, problem.keys, options.preset_normal_impulse)
    else:
        gamma, lam = warm_start[0].copy(), warm_start[1].copy()
        _, feasible = eval_constraints(gamma, mu)
        if not feasible or np.any(lam <= 0.0):
            gamma, lam = warm_start_gamma(None, problem.keys, options.preset_normal_impulse)
            stats.flags.append("warm start infeasible, reset")

    f, _ = eval_constraints(gamma, mu)
    eta = float(-(f @ lam))
    t = m / max(eta, 1e-300)
    # highest barrier weight the (per-constraint) tolerances can require
    t_target = 2.0 / min(options.tol_gap, options.tol_feas)
    growth = options.t_growth
    feas_scale = max(1.0, float(np.max(np.abs(problem.r))))
    it = PdipIterate(gamma, lam, t)
    failures = 0
    tiny_steps = 0
    hessian_mode = options.hessian_mode

    def measures(r_g, eta):
        gap = eta / m
        feas = float(np.max(np.abs(r_g))) / feas_scale
        return gap, feas

    for k in range(1, options.max_newton + 1):
        wall0 = time.perf_counter()
        r_g, r_l, eta = kkt_residual(it, problem, mu)
        gap_measure, feas_measure = measures(r_g, eta)
        rg_norm = float(np.max(np.abs(r_g)))
        rt_norm = _residual_norm(r_g, r_l)
        if gap_measure <= options.tol_gap and feas_measure <= options.tol_feas:
            stats.converged = True
            break
        if gap_measure <= 10.0 * options.tol_gap:
            # a frozen-primal multiplier fit can already certify termination
            lam_try = dual_polish(it.gamma, problem, mu)
            trial = PdipIterate(it.gamma, lam_try, it.t)
            r_g2, _, eta2 = kkt_residual(trial, problem, mu)
            gap2, feas2 = measures(r_g2, eta2)
            if gap2 <= options.tol_gap and feas2 <= options.tol_feas:
                it.lam = lam_try
                stats.converged = True
                stats.flags.append("dual polish")
                break
        if rt_norm <= options.centering_factor * m / it.t and it.t < t_target:
            stats.phase_gaps.append(eta)
            it.t = min(it.t * growth, t_target)
            # restart the multipliers on the new central point; keeps the phase
            # jump from stranding the iterate far off-path in the dual block
            f, _ = eval_constraints(it.gamma, mu)
            it.lam = -1.0 / (it.t * f)
            r_g, r_l, eta = kkt_residual(it, problem, mu)

        tp0 = time.perf_counter()
        blocks = assemble_newton(it, problem, options, hessian_mode=hessian_mode)
        try:
            schur = schur_reduce(blocks, problem.N)
        except FloatingPointError:
            stats.flags.append("near-boundary Schur reduction")
            failures += 1
            if failures > 6:
                break
            # pull boundary-collapsed contacts back inside and recenter the
            # duals at the unchanged barrier weight
            it.gamma = _pull_back_from_boundary(it.gamma, mu)
            f, _ = eval_constraints(it.gamma, mu)
            it.lam = -1.0 / (it.t * f)
            continue
        precompute = time.perf_counter() - tp0

        ts0 = time.perf_counter()
        d_gamma, inner_report = solver(schur, k)
        solve_time = time.perf_counter() - ts0
        d_lam = recover_multiplier_step(blocks, d_gamma)

        try:
            alpha = line_search(it, d_gamma, d_lam, problem, options, mu)
        except FloatingPointError:
            if hessian_mode == "exact":
                hessian_mode = "positive"
                stats.flags.append("line search failed, switching to positive-diagonal Hessian")
                continue
            failures += 1
            stats.flags.append("line search step collapsed")
            if failures > 6:
                break
            growth = max(2.0, growth / 2.0)
            f, _ = eval_constraints(it.gamma, mu)
            it.lam = -1.0 / (it.t * f)
            continue

        if alpha < 1e-6:
            tiny_steps += 1
            if tiny_steps >= 5:
                # a stuck crawl: pull degenerate contacts inward and recenter
                tiny_steps = 0
                failures += 1
                stats.flags.append("crawl recovery")
                if failures > 6:
                    break
                it.gamma = _pull_back_from_boundary(it.gamma, mu)
                f, _ = eval_constraints(it.gamma, mu)
                it.lam = -1.0 / (it.t * f)
                continue
        else:
            tiny_steps = 0

        it.gamma = it.gamma + alpha * d_gamma
        it.lam = it.lam + alpha * d_lam
        stats.newton_iterations = k
        stats.total_inner_iterations += inner_report.iterations
        stats.precompute_time += precompute + inner_report.precond_build_time
        stats.solve_time += solve_time
        stats.trace.append(PdipTraceRow(
            iteration=k, t=it.t, eta=eta, r_gamma_norm=rg_norm, alpha=alpha,
            inner_iterations=inner_report.iterations,
            inner_residual=inner_report.relative_residual,
            precompute_time=precompute + inner_report.precond_build_time,
            solve_time=solve_time, wall_time=time.perf_counter() - wall0))
    else:
        stats.flags.append("newton iteration cap reached")

    r_g, r_l, eta = kkt_residual(it, problem, mu)
    gap_measure, feas_measure = measures(r_g, eta)
    stats.eta = eta
    stats.r_gamma_norm = float(np.max(np.abs(r_g)))
    stats.objective = problem.objective(it.gamma)
    if not stats.converged:
        stats.converged = (gap_measure <= options.tol_gap
                           and feas_measure <= options.tol_feas)
    return it.gamma, it.lam, stats
