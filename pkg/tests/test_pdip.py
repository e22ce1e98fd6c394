import numpy as np
import pytest

from ttdem.first_order import FirstOrderConfig, apgd_solve
from ttdem.krylov import SolveReport
from ttdem.pdip import (NewtonBlocks, PdipIterate, PdipOptions, assemble_newton,
                        dense_schur_solver, eval_constraints, kkt_residual, line_search,
                        pdip_solve, recover_multiplier_step, schur_reduce, warm_start_gamma)

from conftest import random_cluster_world, sphere_on_plane_world
from test_assembly import build_problem

TIGHT = PdipOptions(tol_gap=1e-10, tol_feas=1e-10)


def resting_sphere_problem(mu=0.25, mass=1.0, dt=0.025):
    world = sphere_on_plane_world(mass=mass)
    problem, _, _ = build_problem(world, dt=dt, mu=mu)
    return problem


def test_eval_constraints_plugin_values():
    mu = np.array([0.25])
    f, feasible = eval_constraints(np.array([1.0, 0.0, 0.0]), mu)
    np.testing.assert_allclose(f, [-0.03125, -1.0], atol=1e-15)
    assert feasible
    f, feasible = eval_constraints(np.array([1.0, 0.25, 0.0]), mu)
    assert abs(f[0]) < 1e-15
    assert not feasible
    f, feasible = eval_constraints(np.zeros(3), mu)
    np.testing.assert_allclose(f, [0.0, 0.0], atol=1e-300)
    assert not feasible


def test_kkt_residual_at_analytic_optimum_high_t():
    problem = resting_sphere_problem()
    gamma = np.array([0.25, 0.0, 0.0])
    t = 1e12
    f, _ = eval_constraints(gamma, problem.mu)
    lam = -1.0 / (t * f)
    r_g, r_l, eta = kkt_residual(PdipIterate(gamma, lam, t), problem)
    assert np.linalg.norm(r_g) <= 1e-8
    assert eta <= 1e-8
    np.testing.assert_allclose(r_l, 0.0, atol=1e-18)


def test_kkt_residual_positive_gap_on_feasible_points(rng):
    problem = resting_sphere_problem()
    for _ in range(20):
        gamma = np.array([rng.uniform(0.1, 2.0), 0.0, 0.0])
        gamma[1] = rng.uniform(-0.2, 0.2) * problem.mu[0] * gamma[0]
        lam = rng.uniform(0.1, 2.0, size=2)
        _, _, eta = kkt_residual(PdipIterate(gamma, lam, 10.0), problem)
        assert eta > 0


def test_assemble_newton_hand_case():
    problem = resting_sphere_problem(mu=0.25)
    it = PdipIterate(np.array([1.0, 0.0, 0.0]), np.array([1.0, 1.0]), 5.0)
    blocks = assemble_newton(it, problem)
    np.testing.assert_allclose(blocks.m_hat, [[-0.0625, 1.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(blocks.e, [0.03125, 1.0], atol=1e-15)
    positive = assemble_newton(it, problem, hessian_mode="positive")
    np.testing.assert_allclose(positive.m_hat, [[0.0625, 1.0, 1.0]], atol=1e-15)


def test_assemble_newton_zero_multiplier_limit():
    problem = resting_sphere_problem()
    it = PdipIterate(np.array([1.0, 0.0, 0.0]), np.zeros(2), 5.0)
    blocks = assemble_newton(it, problem)
    np.testing.assert_allclose(blocks.m_hat, 0.0, atol=1e-300)
    kkt, _ = blocks.dense_kkt(problem.N)
    np.testing.assert_allclose(kkt[3:, :3], 0.0, atol=1e-300)  # C block


def test_newton_blocks_match_finite_differences(rng):
    world = random_cluster_world(rng, 12)
    problem, _, _ = build_problem(world)
    nc = problem.n_contacts
    gamma, lam = warm_start_gamma(None, problem.keys)
    gamma += 0.01 * rng.uniform(-1, 1, size=gamma.shape)
    lam += 0.3 * rng.uniform(0, 1, size=lam.shape)
    it = PdipIterate(gamma, lam, 7.0)
    blocks = assemble_newton(it, problem)
    kkt, _ = blocks.dense_kkt(problem.N)
    h = 1e-6
    for _ in range(5):
        d = rng.normal(size=5 * nc)
        d /= np.linalg.norm(d)
        dg, dl = d[:3 * nc], d[3 * nc:]
        rp = kkt_residual(PdipIterate(gamma + h * dg, lam + h * dl, 7.0), problem)
        rm = kkt_residual(PdipIterate(gamma - h * dg, lam - h * dl, 7.0), problem)
        fd = np.concatenate([(rp[0] - rm[0]) / (2 * h), (rp[1] - rm[1]) / (2 * h)])
        jd = kkt @ d
        assert np.linalg.norm(fd - jd) <= 1e-6 * max(1.0, np.linalg.norm(jd))


def test_schur_equals_n_when_corrections_vanish():
    problem = resting_sphere_problem()
    it = PdipIterate(np.array([1.0, 0.0, 0.0]), np.zeros(2), 5.0)
    blocks = assemble_newton(it, problem)
    schur = schur_reduce(blocks, problem.N)
    np.testing.assert_allclose(schur.dense(), problem.N.dense(), atol=1e-15)


def test_schur_matches_dense_elimination_single_contact():
    problem = resting_sphere_problem()
    it = PdipIterate(np.array([0.7, 0.05, -0.03]), np.array([0.8, 1.4]), 11.0)
    blocks = assemble_newton(it, problem)
    schur = schur_reduce(blocks, problem.N)
    kkt, rhs = blocks.dense_kkt(problem.N)
    a11, a12 = kkt[:3, :3], kkt[:3, 3:]
    a21, a22 = kkt[3:, :3], kkt[3:, 3:]
    s_dense = a11 - a12 @ np.linalg.solve(a22, a21)
    rhs_dense = rhs[:3] - a12 @ np.linalg.solve(a22, rhs[3:])
    np.testing.assert_allclose(schur.dense(), s_dense, atol=1e-12)
    np.testing.assert_allclose(schur.rhs, rhs_dense, atol=1e-12)


def test_schur_correction_is_block_diagonal_and_pattern_preserved(rng):
    world = random_cluster_world(rng, 30)
    problem, _, _ = build_problem(world)
    gamma, lam = warm_start_gamma(None, problem.keys)
    it = PdipIterate(gamma, lam + rng.uniform(0, 1, lam.shape), 3.0)
    blocks = assemble_newton(it, problem)
    schur = schur_reduce(blocks, problem.N)
    diff = schur.dense() - problem.N.dense()
    nc = problem.n_contacts
    for i in range(nc):
        for j in range(nc):
            if i != j:
                block = diff[3 * i:3 * i + 3, 3 * j:3 * j + 3]
                assert np.abs(block).max() < 1e-14
    assert (schur.to_csr() != 0).sum() <= (problem.N.to_csr() != 0).sum() + 9 * nc


def test_line_search_full_step_when_unobstructed():
    # near-centered iterate: the Newton step is feasible at full length and
    # decreases the residual, so no backtracking happens
    problem = resting_sphere_problem()
    t = 50.0
    gamma = np.array([0.26, 0.0, 0.0])
    f, _ = eval_constraints(gamma, problem.mu)
    lam = -1.0 / (t * f)
    it = PdipIterate(gamma, 1.02 * lam, t)
    blocks = assemble_newton(it, problem)
    schur = schur_reduce(blocks, problem.N)
    d_gamma, _ = dense_schur_solver(schur)
    d_lam = recover_multiplier_step(blocks, d_gamma)
    alpha = line_search(it, d_gamma, d_lam, problem, PdipOptions())
    assert alpha == pytest.approx(0.99 * min(1.0, float(np.min(-it.lam[d_lam < 0]
                                                               / d_lam[d_lam < 0]))
                                             if np.any(d_lam < 0) else 1.0))
    assert alpha >= 0.49


def test_line_search_respects_cone_boundary():
    problem = resting_sphere_problem(mu=0.25)
    it = PdipIterate(np.array([1.0, 0.0, 0.0]), np.array([1.0, 1.0]), 2.0)
    # direction that exits through the cone surface at alpha = 0.25/0.35 < 1
    d_gamma = np.array([0.0, 0.35, 0.0])
    d_lam = np.zeros(2)
    options = PdipOptions(line_search_slope=0.0)
    alpha = line_search(it, d_gamma, d_lam, problem, options)
    f, feasible = eval_constraints(it.gamma + alpha * d_gamma, problem.mu)
    assert feasible
    assert np.max(f) < 0


def test_pdip_resting_sphere_equilibrium():
    problem = resting_sphere_problem()
    gamma, lam, stats = pdip_solve(problem, options=TIGHT)
    assert stats.converged
    assert abs(gamma[0] - 0.25) <= 1e-6 * 0.25
    np.testing.assert_allclose(gamma[1:], 0.0, atol=1e-8)
    assert np.all(lam > 0)


def test_pdip_separating_contact_gives_zero_impulse():
    world = sphere_on_plane_world(gap=0.05)
    problem, _, _ = build_problem(world, delta=0.06, dt=0.025)
    assert problem.r[0] > 0
    gamma, _, stats = pdip_solve(problem)
    assert stats.converged
    assert abs(gamma[0]) <= 1e-3
    np.testing.assert_allclose(gamma[1:], 0.0, atol=1e-6)


def test_pdip_matches_apgd_on_random_scene(rng):
    world = random_cluster_world(rng, 25)
    problem, _, _ = build_problem(world)
    assert 10 <= problem.n_contacts <= 100
    gamma, _, stats = pdip_solve(problem)
    assert stats.converged
    oracle = apgd_solve(problem, FirstOrderConfig(method="apgd", tolerance=1e-8,
                                                  max_iterations=40_000))
    assert oracle.converged
    scale = max(1.0, abs(oracle.gamma @ (problem.N.matvec(oracle.gamma)) / 2
                         + problem.r @ oracle.gamma))
    assert abs(problem.objective(gamma) - problem.objective(oracle.gamma)) <= 1e-4 * scale


def test_pdip_newton_direction_matches_dense_kkt_elimination(rng):
    world = random_cluster_world(rng, 15)
    problem, _, _ = build_problem(world)
    checked = []

    def instrumented(schur, seed):
        d_schur, rep = dense_schur_solver(schur, seed)
        blocks = instrumented.blocks
        kkt, rhs = blocks.dense_kkt(problem.N)
        full = np.linalg.solve(kkt, rhs)
        rel = (np.linalg.norm(d_schur - full[:3 * problem.n_contacts])
               / max(np.linalg.norm(full[:3 * problem.n_contacts]), 1e-300))
        checked.append(rel)
        return d_schur, rep

    # shim: capture blocks through assemble_newton
    original = assemble_newton

    def capturing(it, prob, options=None, hessian_mode=None):
        blocks = original(it, prob, options, hessian_mode)
        instrumented.blocks = blocks
        return blocks

    import ttdem.pdip as pdip_module
    pdip_module.assemble_newton = capturing
    try:
        _, _, stats = pdip_solve(problem, linear_solver=instrumented)
    finally:
        pdip_module.assemble_newton = original
    assert stats.converged
    assert checked and max(checked) <= 1e-8


def test_pdip_eta_strictly_decreasing_across_phases(rng):
    world = random_cluster_world(rng, 20)
    problem, _, _ = build_problem(world)
    _, _, stats = pdip_solve(problem)
    assert stats.converged
    assert len(stats.phase_gaps) >= 2
    assert all(b < a for a, b in zip(stats.phase_gaps, stats.phase_gaps[1:]))


def test_pdip_schur_positive_definite_at_accepted_iterates(rng):
    world = random_cluster_world(rng, 20)
    problem, _, _ = build_problem(world)

    def probing(schur, seed):
        s = schur.dense()
        shift = 1e-12 * np.trace(s) / s.shape[0]
        np.linalg.cholesky(s + shift * np.eye(s.shape[0]))
        np.testing.assert_allclose(s, s.T, atol=1e-12 * max(1.0, np.abs(s).max()))
        return dense_schur_solver(schur, seed)

    _, _, stats = pdip_solve(problem, linear_solver=probing)
    assert stats.converged


def test_pdip_trace_rows_populated(rng):
    world = random_cluster_world(rng, 10)
    problem, _, _ = build_problem(world)
    _, _, stats = pdip_solve(problem)
    assert stats.converged
    assert len(stats.trace) == stats.newton_iterations
    for row in stats.trace:
        assert row.t > 0 and row.eta > 0 and 0 < row.alpha <= 0.99
        assert row.wall_time >= 0


def test_pdip_converged_start_takes_no_steps():
    problem = resting_sphere_problem()
    gamma, lam, stats = pdip_solve(problem, options=PdipOptions(tol_gap=1e-6, tol_feas=1e-6))
    f, _ = eval_constraints(gamma, problem.mu)
    lam_centered = -1.0 / (1e12 * f)
    _, _, stats2 = pdip_solve(problem, warm_start=(gamma, lam_centered),
                              options=PdipOptions(tol_gap=1e-4, tol_feas=1e-4))
    assert stats2.converged
    assert stats2.newton_iterations == 0


def test_warm_start_rules():
    keys = [(0, 1, 0), (0, 2, 0), (1, 2, 0)]
    g, lam = warm_start_gamma(None, keys)
    np.testing.assert_allclose(g.reshape(-1, 3)[:, 0], 1.0)
    np.testing.assert_allclose(g.reshape(-1, 3)[:, 1:], 0.0)
    np.testing.assert_allclose(lam, 1.0)
    previous = {(0, 1, 0): 0.7, (1, 2, 0): 0.0}
    g, lam = warm_start_gamma(previous, keys)
    assert g[0] == 0.7            # persisted
    assert g[3] == 1.0            # preset for the new contact
    assert g[6] >= 1e-8           # floored to stay strictly feasible
    mu = np.full(3, 0.25)
    _, feasible = eval_constraints(g, mu)
    assert feasible


def test_pdip_frictionless_sphere_tight():
    problem = resting_sphere_problem(mu=0.0)
    gamma, _, stats = pdip_solve(problem, options=TIGHT)
    assert stats.converged
    assert abs(gamma[0] - 0.25) <= 1e-6 * 0.25
    assert np.linalg.norm(gamma[1:]) <= 1e-8


def test_pdip_empty_problem():
    from ttdem.assembly import BlockSparseMatrix, CcpProblem
    empty = CcpProblem(
        BlockSparseMatrix(0, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                          np.zeros((0, 3, 3))),
        np.zeros(0), np.zeros(0), [])
    gamma, lam, stats = pdip_solve(empty)
    assert stats.converged
    assert gamma.size == 0
