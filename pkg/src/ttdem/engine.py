"""Timestep orchestration: detect, assemble, solve the CCP, apply impulses, advance.

A SimulationState carries everything reused across steps: previous normal
impulses keyed by persistent contact id (warm starts), and the TT
preconditioner manager owning the contact hierarchy and factorization cache.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_problem, build_contact_jacobian, ccp_residual
from .bodies import WorldState, advance_positions, apply_contact_impulses, external_impulse
from .collision import ActiveSet, Sphere, detect_contacts
from .first_order import FirstOrderConfig, apgd_solve, projected_splitting_solve
from .hierarchy import build_hierarchy, carry_hierarchy, PersistenceMap
from .krylov import LinearOperator, bicgstab, ilu0_build
from .pdip import PdipOptions, dense_schur_solver, pdip_solve, warm_start_gamma
from .precond import compress_and_invert, tt_precondition_apply


@dataclass
class SolverConfig:
    solver: str = "pdip"              # pdip | pgs | jacobi | apgd
    linear_solver: str = "ilu0"       # dense | none | ilu0 | tt (pdip inner systems)
    dt: float = 0.025
    mu: float = 0.25
    contact_margin: float | None = None   # default 0.1 x smallest sphere radius
    penetration_clamp: float | None = None
    pdip: PdipOptions = field(default_factory=PdipOptions)
    first_order_tol: float = 1e-6
    first_order_max_iter: int = 20_000
    krylov_tol: float = 1e-6
    krylov_max_iter: int = 1000
    tt_eps: float = 1e-2
    tt_rank_cap: int = 10
    seed: int = 0
    collect_wall_times: bool = True


@dataclass
class StepReport:
    step_index: int
    time: float
    n_contacts: int = 0
    solver: str = ""
    converged: bool = True
    newton_iterations: int = 0
    solver_iterations: int = 0        # first-order sweep count
    inner_iterations: int = 0         # summed Krylov iterations
    precompute_time: float = 0.0
    solve_time: float = 0.0
    detect_time: float = 0.0
    assemble_time: float = 0.0
    persistence_fraction: float = 0.0
    max_penetration: float = 0.0
    objective: float = 0.0
    residual: float = 0.0
    eta: float = 0.0
    hierarchy_resets: int = 0
    trace: list = field(default_factory=list)
    gravity_impulse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    boundary_impulse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    momentum_delta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    flags: list[str] = field(default_factory=list)


class TtPreconditionerManager:
    """Owns the contact hierarchy and factorization cache across steps."""

    def __init__(self, eps: float, r_max: int, seed: int = 0):
        self.eps = eps
        self.r_max = r_max
        self.seed = seed
        self.hierarchy = None
        self.cache = None
        self.pmap: PersistenceMap | None = None
        self.slots = None
        self.resets = 0
        self.mismatches = 0
        self.build_times: list[tuple[float, bool]] = []   # (seconds, warm_started)

    def begin_step(self, active: ActiveSet) -> None:
        if len(active) == 0:
            self.slots = None
            return
        if self.hierarchy is None:
            self.hierarchy = build_hierarchy(active)
            self.pmap = PersistenceMap()
        else:
            updated, pmap = carry_hierarchy(self.hierarchy, self.pmap, active)
            self.pmap = pmap
            if updated is None:
                self.hierarchy = build_hierarchy(active)
                self.resets += 1
            else:
                self.hierarchy = updated
        self.slots = self.hierarchy.slots_for(active)

    def factorize(self, schur, seed: int, force_cold: bool = False):
        rng = np.random.default_rng((self.seed, seed))
        cache_in = None if force_cold else self.cache
        if cache_in is not None and not cache_in.valid_for(self.hierarchy):
            self.mismatches += 1
            cache_in = None
        cache = compress_and_invert(schur, self.hierarchy, self.slots, cache_in,
                                    self.eps, self.r_max, rng=rng)
        if not force_cold:
            self.cache = cache
        self.build_times.append((cache.build_time, cache.warm_started))
        hierarchy, slots = self.hierarchy, self.slots

        def apply_fn(z: np.ndarray) -> np.ndarray:
            return tt_precondition_apply(cache, hierarchy, slots, z)

        return apply_fn, cache


def make_schur_solver(config: SolverConfig, manager: TtPreconditionerManager | None,
                      step_index: int):
    """Inner linear-solver handle handed to the interior-point loop."""
    mode = config.linear_solver
    if mode == "dense":
        return dense_schur_solver
    if mode not in ("none", "ilu0", "tt"):
        raise ValueError(f"unknown linear solver {mode!r}")

    def solve(schur, newton_k: int):
        build_time = 0.0
        precond = None
        if mode == "ilu0":
            t0 = time.perf_counter()
            precond = ilu0_build(schur.to_csr())
            build_time = time.perf_counter() - t0
        elif mode == "tt":
            apply_fn, cache = manager.factorize(schur, seed=(step_index, newton_k))
            precond = apply_fn
            build_time = cache.build_time
        op = LinearOperator(schur.dim, schur.matvec)
        seed = (config.seed * 1_000_003 + step_index * 1009 + newton_k) & 0x7FFFFFFF
        x, report = bicgstab(op, schur.rhs, preconditioner=precond,
                             tol=config.krylov_tol, max_iter=config.krylov_max_iter,
                             seed=seed)
        report.precond_build_time = build_time
        return x, report

    return solve


@dataclass
class SimulationState:
    previous_impulses: dict = field(default_factory=dict)
    previous_keys: set = field(default_factory=set)
    tt_manager: TtPreconditionerManager | None = None

    @classmethod
    def for_config(cls, config: SolverConfig) -> "SimulationState":
        manager = None
        if config.solver == "pdip" and config.linear_solver == "tt":
            manager = TtPreconditionerManager(config.tt_eps, config.tt_rank_cap,
                                              seed=config.seed)
        return cls(tt_manager=manager)


def default_contact_margin(world: WorldState, config: SolverConfig) -> float:
    if config.contact_margin is not None:
        return config.contact_margin
    radii = [b.shape.radius for b in world.bodies if isinstance(b.shape, Sphere)]
    return 0.1 * min(radii) if radii else 0.0


def _boundary_impulse(world: WorldState, jacobian, gamma: np.ndarray) -> np.ndarray:
    """Linear impulse delivered to dynamic bodies by contacts with kinematic ones."""
    total = np.zeros(3)
    g = gamma.reshape(-1, 3)
    for c in range(jacobian.n_contacts):
        a, b = jacobian.body_pairs[c]
        kin_a = world.bodies[a].kinematic
        kin_b = world.bodies[b].kinematic
        if kin_a == kin_b:
            continue
        dyn_slot = 1 if kin_a else 0
        total += jacobian.blocks[c, dyn_slot, :3, :] @ g[c]
    return total


def simulate_step(world: WorldState, config: SolverConfig,
                  state: SimulationState | None = None,
                  ) -> tuple[WorldState, StepReport]:
    """Advance the world by one timestep; returns the world and a step report."""
    state = state if state is not None else SimulationState.for_config(config)
    report = StepReport(step_index=world.step_index, time=world.time,
                        solver=config.solver)
    dt = config.dt

    t0 = time.perf_counter()
    active = detect_contacts(world, default_contact_margin(world, config))
    report.detect_time = time.perf_counter() - t0
    report.n_contacts = len(active)
    if active.contacts:
        report.max_penetration = max(0.0, -min(c.gap for c in active.contacts))
    current_keys = set(active.keys)
    if report.n_contacts:
        persisted = len(current_keys & state.previous_keys)
        report.persistence_fraction = persisted / report.n_contacts

    k_vec = external_impulse(world, dt)

    if report.n_contacts == 0:
        v = world.mass_operator().free_velocity(k_vec)
        _finish_step(world, state, report, None, np.zeros(0), k_vec, v, dt, set())
        return world, report

    t0 = time.perf_counter()
    jacobian = build_contact_jacobian(world, active)
    problem = assemble_problem(world, active, jacobian, k_vec, dt, config.mu,
                               config.penetration_clamp)
    report.assemble_time = time.perf_counter() - t0

    gamma0, lam0 = warm_start_gamma(state.previous_impulses, problem.keys,
                                    config.pdip.preset_normal_impulse)

    t0 = time.perf_counter()
    if config.solver == "pdip":
        if state.tt_manager is not None:
            state.tt_manager.begin_step(active)
            report.hierarchy_resets = state.tt_manager.resets
        solver = make_schur_solver(config, state.tt_manager, world.step_index)
        gamma, lam, stats = pdip_solve(problem, warm_start=(gamma0, lam0),
                                       linear_solver=solver, options=config.pdip)
        report.converged = stats.converged
        report.newton_iterations = stats.newton_iterations
        report.inner_iterations = stats.total_inner_iterations
        report.precompute_time = stats.precompute_time
        report.eta = stats.eta
        report.trace = stats.trace
        report.flags.extend(stats.flags)
    else:
        fo = FirstOrderConfig(
            method={"pgs": "projected-gauss-seidel", "jacobi": "projected-jacobi",
                    "apgd": "apgd"}[config.solver],
            tolerance=config.first_order_tol,
            max_iterations=config.first_order_max_iter)
        run = apgd_solve if config.solver == "apgd" else projected_splitting_solve
        result = run(problem, fo, gamma0=gamma0)
        gamma = result.gamma
        report.converged = result.converged
        report.solver_iterations = result.iterations
        report.flags.extend(result.flags)
    report.solve_time = time.perf_counter() - t0
    report.objective = problem.objective(gamma)
    report.residual = ccp_residual(gamma, problem)
    if not report.converged:
        report.flags.append("contact solver did not reach tolerance")

    v = apply_contact_impulses(world, jacobian, gamma, k_vec)
    report.boundary_impulse = _boundary_impulse(world, jacobian, gamma)
    _finish_step(world, state, report, problem, gamma, k_vec, v, dt, current_keys)
    return world, report


def _finish_step(world, state, report, problem, gamma, k_vec, v, dt, current_keys):
    mass = world.mass_operator()
    dyn = ~mass.kinematic_mask6
    momentum_before = (mass.diag6 * world.generalized_velocity())[dyn].reshape(-1, 6)
    momentum_after = (mass.diag6 * v)[dyn].reshape(-1, 6)
    report.momentum_delta = (momentum_after[:, :3] - momentum_before[:, :3]).sum(axis=0)
    grav = np.zeros(3)
    for b in world.bodies:
        if not b.kinematic:
            grav += dt * b.mass * world.gravity
    report.gravity_impulse = grav

    advance_positions(world, v, dt)

    state.previous_keys = current_keys
    if problem is not None:
        state.previous_impulses = {
            key: gamma[3 * i] for i, key in enumerate(problem.keys)}
    else:
        state.previous_impulses = {}


class Simulator:
    """Convenience wrapper running consecutive steps with persistent state."""

    def __init__(self, world: WorldState, config: SolverConfig):
        self.world = world
        self.config = config
        self.state = SimulationState.for_config(config)
        self.reports: list[StepReport] = []

    def step(self) -> StepReport:
        _, report = simulate_step(self.world, self.config, self.state)
        self.reports.append(report)
        return report

    def run(self, n_steps: int) -> list[StepReport]:
        for _ in range(n_steps):
            self.step()
        return self.reports
