"""First-order CCP solvers: projected Jacobi/Gauss-Seidel splitting and APGD.

These serve as correctness oracles for the interior-point path and as
performance baselines. All iterates stay cone-feasible because every update
ends in an exact cone projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import CcpProblem, ccp_residual, project_cone, project_cones


@dataclass
class FirstOrderConfig:
    method: str = "projected-gauss-seidel"   # projected-jacobi | projected-gauss-seidel | apgd
    max_iterations: int = 10_000
    tolerance: float = 1e-6
    omega: float | None = None               # default 0.3 Jacobi, 1.0 Gauss-Seidel
    check_every: int = 10

    def __post_init__(self):
        if self.method not in ("projected-jacobi", "projected-gauss-seidel", "apgd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.omega is not None:
            hi = 1.0 if self.method == "projected-jacobi" else 2.0
            if not (0.0 < self.omega <= hi):
                raise ValueError("relaxation factor out of range")

    def relaxation(self) -> float:
        if self.omega is not None:
            return self.omega
        return 0.3 if self.method == "projected-jacobi" else 1.0


@dataclass
class FirstOrderResult:
    gamma: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    flags: list[str] = field(default_factory=list)


def _block_step_scales(problem: CcpProblem) -> tuple[np.ndarray, bool]:
    """Per-contact scalar step metric s_i = trace(N_ii)/3.

    A scalar metric keeps the Euclidean cone projection consistent with the
    step, so fixed points of the sweep are exact QP solutions; a full 3x3
    block inverse would need a projection in the block metric instead.
    """
    blocks = problem.N.diagonal_blocks()
    scales = np.trace(blocks, axis1=1, axis2=2) / 3.0
    regularized = bool(np.any(scales <= 1e-12))
    if regularized:
        scales = np.maximum(scales, np.maximum(1e-12 * scales.max(), 1e-12))
    return scales, regularized


def projected_splitting_solve(problem: CcpProblem, config: FirstOrderConfig,
                              gamma0: np.ndarray | None = None) -> FirstOrderResult:
    """Fixed-point iteration gamma <- Pi(gamma - omega B^{-1}(N gamma + r)).

    B holds the diagonal 3x3 blocks of N; Jacobi updates all contacts from the
    previous iterate, Gauss-Seidel sweeps in place in contact-key order.
    """
    nc = problem.n_contacts
    gamma = np.zeros(3 * nc) if gamma0 is None else project_cones(gamma0.copy(), problem.mu)
    omega = config.relaxation()
    scales, regularized = _block_step_scales(problem)
    result = FirstOrderResult(gamma, 0)
    if regularized:
        result.flags.append("singular diagonal block regularized")
    jacobi = config.method == "projected-jacobi"

    if not jacobi:
        # column neighbors for in-place residual updates during a sweep
        col_blocks: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(nc)]
        for (j, i), pos in problem.N.index.items():
            col_blocks[i].append((j, problem.N.blocks[pos]))

    for it in range(1, config.max_iterations + 1):
        if jacobi:
            y = (problem.N.matvec(gamma) + problem.r).reshape(nc, 3)
            g = gamma.reshape(nc, 3) - (omega / scales)[:, None] * y
            gamma = project_cones(g.reshape(-1), problem.mu)
        else:
            w = problem.N.matvec(gamma) + problem.r
            for i in range(nc):
                s = slice(3 * i, 3 * i + 3)
                gi = project_cone(gamma[s] - (omega / scales[i]) * w[s], problem.mu[i])
                delta = gi - gamma[s]
                if np.any(delta):
                    gamma[s] = gi
                    for j, block in col_blocks[i]:
                        w[3 * j:3 * j + 3] += block @ delta
        if it % config.check_every == 0 or it == config.max_iterations:
            res = ccp_residual(gamma, problem)
            result.residuals.append(res)
            if res <= config.tolerance:
                result.converged = True
                break
    result.gamma = gamma
    result.iterations = it
    return result


def apgd_solve(problem: CcpProblem, config: FirstOrderConfig,
               gamma0: np.ndarray | None = None) -> FirstOrderResult:
    """Nesterov-accelerated projected gradient with adaptive Lipschitz backtracking.

    Momentum restarts whenever the objective increases.
    """
    nc = problem.n_contacts
    gamma = np.zeros(3 * nc) if gamma0 is None else project_cones(gamma0.copy(), problem.mu)
    y = gamma.copy()
    theta = 1.0
    lipschitz = max(problem.N.one_norm(), 1e-12)
    q_prev = problem.objective(gamma)
    result = FirstOrderResult(gamma, 0)

    for it in range(1, config.max_iterations + 1):
        grad = problem.N.matvec(y) + problem.r
        q_y = problem.objective(y)
        while True:
            candidate = project_cones(y - grad / lipschitz, problem.mu)
            dy = candidate - y
            if (problem.objective(candidate)
                    <= q_y + grad @ dy + 0.5 * lipschitz * (dy @ dy) + 1e-14):
                break
            lipschitz *= 2.0
        theta_new = 0.5 * (-theta**2 + theta * np.sqrt(theta**2 + 4.0))
        beta = theta * (1.0 - theta) / (theta**2 + theta_new)
        gamma_new = candidate
        q_new = problem.objective(gamma_new)
        if q_new > q_prev:
            # restart momentum at the new point
            y = gamma_new.copy()
            theta_new = 1.0
        else:
            y = gamma_new + beta * (gamma_new - gamma)
        gamma = gamma_new
        q_prev = min(q_prev, q_new)
        theta = theta_new
        lipschitz *= 0.97
        if it % config.check_every == 0 or it == config.max_iterations:
            res = ccp_residual(gamma, problem)
            result.residuals.append(res)
            if res <= config.tolerance:
                result.converged = True
                break
    result.gamma = gamma
    result.iterations = it
    return result
