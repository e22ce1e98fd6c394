import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from ttdem.krylov import LinearOperator, bicgstab, dense_solve, ilu0_build


def random_spd(rng, n, diag_boost=1.0):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + diag_boost * np.eye(n)


def test_bicgstab_identity_converges_immediately(rng):
    b = rng.normal(size=16)
    x, rep = bicgstab(LinearOperator.from_matrix(np.eye(16)), b, tol=1e-12)
    assert rep.iterations <= 1
    np.testing.assert_allclose(x, b, atol=1e-12)


def test_bicgstab_matches_dense_solver(rng):
    a = random_spd(rng, 64, diag_boost=2.0)
    b = rng.normal(size=64)
    x, rep = bicgstab(LinearOperator.from_matrix(a), b, tol=1e-10, max_iter=500)
    assert rep.converged
    np.testing.assert_allclose(x, np.linalg.solve(a, b), atol=1e-8, rtol=1e-8)


def test_bicgstab_perfect_preconditioner_two_iterations(rng):
    a = random_spd(rng, 40)
    inv = np.linalg.inv(a)
    b = rng.normal(size=40)
    x, rep = bicgstab(LinearOperator.from_matrix(a), b, preconditioner=lambda z: inv @ z,
                      tol=1e-10)
    assert rep.iterations <= 2
    assert rep.relative_residual <= 1e-10


def test_bicgstab_reported_residual_is_recomputed(rng):
    a = random_spd(rng, 30)
    b = rng.normal(size=30)
    x, rep = bicgstab(LinearOperator.from_matrix(a), b, tol=1e-8)
    explicit = np.linalg.norm(b - a @ x) / np.linalg.norm(b)
    assert abs(rep.relative_residual - explicit) < 1e-12


def test_bicgstab_deterministic(rng):
    a = random_spd(rng, 50, diag_boost=0.1)
    b = rng.normal(size=50)
    x1, r1 = bicgstab(LinearOperator.from_matrix(a), b, tol=1e-9, seed=7)
    x2, r2 = bicgstab(LinearOperator.from_matrix(a), b, tol=1e-9, seed=7)
    np.testing.assert_array_equal(x1, x2)
    assert r1.iterations == r2.iterations


def test_bicgstab_zero_rhs():
    x, rep = bicgstab(LinearOperator.from_matrix(np.eye(5)), np.zeros(5))
    assert rep.converged
    np.testing.assert_array_equal(x, np.zeros(5))


def test_ilu0_diagonal_matrix_is_exact_inverse(rng):
    d = rng.uniform(1.0, 3.0, size=20)
    m = sp.diags(d).tocsr()
    pre = ilu0_build(m)
    z = rng.normal(size=20)
    np.testing.assert_allclose(pre.apply(z), z / d, atol=1e-14)


def test_ilu0_tridiagonal_is_exact_lu(rng):
    n = 40
    m = sp.diags([-np.ones(n - 1), 3.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()
    pre = ilu0_build(m)
    z = rng.normal(size=n)
    np.testing.assert_allclose(m @ pre.apply(z), z, atol=1e-12)


def test_ilu0_reduces_bicgstab_iterations(rng):
    # sparse SPD with off-diagonal coupling; ILU(0) must strictly beat no preconditioner
    n = 300
    m = sp.random(n, n, density=0.02, random_state=11, format="csr")
    m = m + m.T + sp.diags(5.0 * np.ones(n))
    b = rng.normal(size=n)
    op = LinearOperator.from_matrix(m)
    _, plain = bicgstab(op, b, tol=1e-8, max_iter=1000)
    pre = ilu0_build(m.tocsr())
    _, precond = bicgstab(op, b, preconditioner=pre, tol=1e-8, max_iter=1000)
    assert precond.converged
    assert precond.iterations < plain.iterations


def test_dense_solve_identity(rng):
    b = rng.normal(size=8)
    np.testing.assert_array_equal(dense_solve(np.eye(8), b), b)


def test_dense_solve_hilbert_residual():
    n = 8
    h = scipy.linalg.hilbert(n)
    b = np.ones(n)
    x = dense_solve(h, b)
    assert np.linalg.norm(b - h @ x) / np.linalg.norm(b) <= 1e-10


def test_dense_solve_matches_cg(rng):
    a = random_spd(rng, 100, diag_boost=1.0)
    b = rng.normal(size=100)
    x = dense_solve(a, b)
    x_cg, info = sp.linalg.cg(a, b, rtol=1e-12, maxiter=10_000)
    assert info == 0
    np.testing.assert_allclose(x, x_cg, atol=1e-7)


def test_dense_solve_rejects_singular():
    with pytest.raises(np.linalg.LinAlgError):
        dense_solve(np.zeros((4, 4)), np.ones(4))
