"""Rank-adaptive TT compression from an entry oracle (cross approximation).

The tensor is never formed: alternating left-right sweeps evaluate two-mode
supercores at cross positions chosen by maxvol pivoting, grow or shrink ranks
through local SVD truncation (plus a small random enrichment while the target
accuracy is not met), and stop once a held-out random sample of entries is
reproduced to the requested relative accuracy. Passing a previous decomposition
as the initial guess seeds both the cores and the pivot sets, which is what
makes updates of slowly-changing operators cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (TtTensor, TtMatrix, _chop_rank, digits_to_flat, tt_random,
                   tt_round)


class OracleCounter:
    """Wraps an entry oracle (multi-index or row/col form) and counts evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, *args) -> np.ndarray:
        self.calls += int(np.asarray(args[0]).shape[0])
        return self.fn(*args)


@dataclass
class CrossStats:
    sweeps: float = 0.0          # half-sweeps count 0.5
    oracle_calls: int = 0
    validation_error: float = np.inf
    converged: bool = False
    rank_capped: bool = False


def maxvol(a: np.ndarray, tol: float = 1.02, max_iter: int = 200) -> np.ndarray:
    """Greedy quasi-maximum-volume row subset of a tall matrix (m x r, m >= r)."""
    m, r = a.shape
    if m < r:
        raise ValueError("maxvol needs a tall matrix")
    if m == r:
        return np.arange(m)
    _, _, piv = scipy.linalg.qr(a.T, pivoting=True, mode="economic")
    idx = piv[:r].copy()
    for _ in range(max_iter):
        sub = a[idx]
        b = np.linalg.solve(sub.T, a.T).T
        j, k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[j, k]) <= tol:
            break
        idx[k] = j
    return idx


def _interp_basis(basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sel = maxvol(basis)
    g = np.linalg.solve(basis[sel].T, basis.T).T
    return g, sel


def _enrich(basis: np.ndarray, extra: int, rng) -> np.ndarray:
    if extra <= 0:
        return basis
    rand = rng.standard_normal((basis.shape[0], extra))
    q, _ = np.linalg.qr(np.hstack([basis, rand]))
    return q[:, :basis.shape[1] + extra]


def _row_digits(i_set: np.ndarray, n: int) -> np.ndarray:
    r = i_set.shape[0]
    left = np.repeat(i_set, n, axis=0)
    mid = np.tile(np.arange(n, dtype=np.int64), r)[:, None]
    return np.concatenate([left, mid], axis=1)


def _col_digits(n: int, j_set: np.ndarray) -> np.ndarray:
    r = j_set.shape[0]
    mid = np.repeat(np.arange(n, dtype=np.int64), r)[:, None]
    right = np.tile(j_set, (n, 1))
    return np.concatenate([mid, right], axis=1)


def _supercore(oracle, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    nr, nc = rows.shape[0], cols.shape[0]
    idx = np.concatenate([np.repeat(rows, nc, axis=0), np.tile(cols, (nr, 1))], axis=1)
    return oracle(idx).reshape(nr, nc)


def _init_pivots(cores: list[np.ndarray], rng) -> list[np.ndarray]:
    """Right-to-left maxvol pass: pivot suffix sets from the current cores.

    Leaves the cores in interpolation-normalized form with the carried factors
    absorbed leftward, so the chain still represents (approximately) the same
    tensor and the pivot sets index its dominant fibers.
    """
    d = len(cores)
    j_sets: list[np.ndarray | None] = [None] * (d + 1)
    j_sets[d] = np.zeros((1, 0), dtype=np.int64)
    for p in range(d - 1, 0, -1):
        r0, n, r1 = cores[p].shape
        mat = cores[p].reshape(r0, n * r1).T
        q, rfac = np.linalg.qr(mat)
        ghat, sel = _interp_basis(q)
        rnew = q.shape[1]
        i_dig = (sel // r1).astype(np.int64)
        beta = (sel % r1).astype(np.int64)
        j_sets[p] = np.concatenate([i_dig[:, None], j_sets[p + 1][beta]], axis=1)
        cores[p] = ghat.T.reshape(rnew, n, r1)
        carry = rfac.T @ q[sel].T
        cores[p - 1] = np.tensordot(cores[p - 1], carry, axes=([2], [0]))
    return j_sets


def tt_cross_compress(oracle, mode_sizes, eps: float, r_max: int,
                      guess: TtTensor | None = None, rng=None, max_sweeps: int = 25,
                      n_validation: int = 1000, kick: int = 1,
                      ) -> tuple[TtTensor, CrossStats]:
    """Compress an entry oracle into TT form without forming the dense tensor.

    oracle maps an integer index array (B, d) to entry values (B,). Returns the
    best decomposition found and run statistics; stats.rank_capped is set when
    r_max binds before the validation error reaches eps.
    """
    if eps <= 0 or r_max < 1:
        raise ValueError("need eps > 0 and r_max >= 1")
    mode_sizes = tuple(int(n) for n in mode_sizes)
    d = len(mode_sizes)
    rng = np.random.default_rng(0) if rng is None else rng
    counter = oracle if isinstance(oracle, OracleCounter) else OracleCounter(oracle)
    stats = CrossStats()

    if d == 1:
        vals = counter(np.arange(mode_sizes[0], dtype=np.int64)[:, None])
        stats.oracle_calls = counter.calls
        stats.converged = True
        stats.validation_error = 0.0
        return TtTensor([vals.reshape(1, -1, 1)]), stats

    if guess is not None:
        if tuple(guess.mode_sizes) != mode_sizes:
            raise ValueError("guess mode sizes do not match")
        work = guess.copy()
        if max(work.ranks) > r_max:
            work = tt_round(work, eps, r_max=r_max)
        cores = [c.copy() for c in work.cores]
    else:
        r0 = min(2, r_max)
        cores = [c.copy() for c in tt_random(mode_sizes, [r0] * (d - 1), rng).cores]

    j_sets = _init_pivots(cores, rng)
    i_sets: list[np.ndarray | None] = [None] * (d + 1)
    i_sets[0] = np.zeros((1, 0), dtype=np.int64)

    def sample_indices(count: int) -> np.ndarray:
        """Held-out samples: uniform entries plus perturbed pivot fibers.

        Pure uniform sampling misses all the mass of very sparse targets
        (an identity matrix is hit on the diagonal with probability ~N^-1),
        so a fraction of samples starts from current cross pivots and
        re-randomizes a single digit.
        """
        n_uniform = (7 * count) // 10
        uniform = np.column_stack([rng.integers(0, n, size=n_uniform)
                                   for n in mode_sizes])
        n_piv = count - n_uniform
        rows = np.empty((n_piv, d), dtype=np.int64)
        bonds = rng.integers(1, d, size=n_piv)
        for s in range(n_piv):
            k = int(bonds[s])
            left = i_sets[k] if i_sets[k] is not None else np.zeros((1, k), dtype=np.int64)
            right = j_sets[k] if j_sets[k] is not None else np.zeros((1, d - k), dtype=np.int64)
            rows[s, :k] = left[rng.integers(0, left.shape[0])]
            rows[s, k:] = right[rng.integers(0, right.shape[0])]
            pos = int(rng.integers(0, d))
            rows[s, pos] = rng.integers(0, mode_sizes[pos])
        return np.concatenate([uniform, rows], axis=0)

    def measure(test_cores: list[np.ndarray], idx: np.ndarray,
                truth: np.ndarray) -> float:
        pred = TtTensor(test_cores).eval_batch(idx)
        scale = np.linalg.norm(truth)
        if scale < 1e-300:
            return float(np.linalg.norm(pred - truth))
        return float(np.linalg.norm(pred - truth) / scale)

    last_sample: list = [None, None]

    def validate(size: int | None = None) -> float:
        nonlocal_size = size
        idx = sample_indices(nonlocal_size or n_validation)
        truth = counter(idx)
        last_sample[0] = idx
        last_sample[1] = truth
        return measure(cores, idx, truth)

    delta_factor = eps / np.sqrt(d - 1)
    best_cores = None
    best_err = np.inf
    history: list[float] = []
    if guess is not None:
        # score the warm start itself; a barely-changed target then stops the
        # sweeps as soon as they fail to improve on it
        best_err = validate(max(200, n_validation // 4))
        best_cores = [c.copy() for c in cores]
        history.append(best_err)
    max_sweeps = 0 if best_err <= eps else max_sweeps

    def half_sweep_l2r(grow: int) -> None:
        for p in range(d - 1):
            rows = _row_digits(i_sets[p], mode_sizes[p])
            cols = _col_digits(mode_sizes[p + 1], j_sets[p + 2])
            b = _supercore(counter, rows, cols)
            u, s, _ = np.linalg.svd(b, full_matrices=False)
            cap = min(r_max, min(b.shape))
            r_trunc = _chop_rank(s, delta_factor * np.linalg.norm(s), cap)
            r_new = min(r_trunc + grow, cap)
            basis = _enrich(u[:, :r_trunc], r_new - r_trunc, rng)
            g, sel = _interp_basis(basis)
            w = basis[sel] @ (basis.T @ b)
            i_sets[p + 1] = rows[sel]
            cores[p] = g.reshape(i_sets[p].shape[0], mode_sizes[p], r_new)
            cores[p + 1] = w.reshape(r_new, mode_sizes[p + 1], j_sets[p + 2].shape[0])

    def half_sweep_r2l(grow: int) -> None:
        for p in range(d - 2, -1, -1):
            rows = _row_digits(i_sets[p], mode_sizes[p])
            cols = _col_digits(mode_sizes[p + 1], j_sets[p + 2])
            b = _supercore(counter, rows, cols)
            _, s, vt = np.linalg.svd(b, full_matrices=False)
            cap = min(r_max, min(b.shape))
            r_trunc = _chop_rank(s, delta_factor * np.linalg.norm(s), cap)
            r_new = min(r_trunc + grow, cap)
            basis = _enrich(vt[:r_trunc].T, r_new - r_trunc, rng)
            g, sel = _interp_basis(basis)
            w = basis[sel] @ (basis.T @ b.T)
            j_sets[p + 1] = cols[sel]
            cores[p + 1] = g.T.reshape(r_new, mode_sizes[p + 1], j_sets[p + 2].shape[0])
            cores[p] = w.T.reshape(i_sets[p].shape[0], mode_sizes[p], r_new)

    done = False
    for sweep in range(1, max_sweeps + 1):
        for half in (half_sweep_l2r, half_sweep_r2l):
            half(kick if best_err > eps else 0)
            err = validate()
            history.append(err)
            stats.sweeps += 0.5
            if err < best_err:
                best_err = err
                best_cores = [c.copy() for c in cores]
            if err <= eps:
                done = True
                break
        if done:
            break
        if len(history) >= 3 and history[-1] > 0.98 * min(history[-3:-1]):
            break

    result = TtTensor(best_cores if best_cores is not None else cores)
    rounded = tt_round(result, 0.3 * eps)
    if last_sample[0] is not None:
        idx, truth = last_sample
    else:
        idx = sample_indices(n_validation)
        truth = counter(idx)
    err_rounded = measure(rounded.cores, idx, truth)
    if err_rounded <= max(best_err, eps):
        result = rounded
        best_err = min(best_err, err_rounded)
    stats.validation_error = best_err
    stats.converged = best_err <= eps
    stats.rank_capped = (not stats.converged) and max(result.ranks, default=1) >= r_max
    stats.oracle_calls = counter.calls
    return result, stats


def tt_cross_matrix(entry_oracle, row_sizes, col_sizes, eps: float, r_max: int,
                    guess: TtMatrix | None = None, rng=None, **kwargs,
                    ) -> tuple[TtMatrix, CrossStats]:
    """Cross-compress a matrix oracle over paired level indices.

    entry_oracle maps flat (rows, cols) index arrays to entries; pairing each
    level's row and column digit into one mode makes the matrix an ordinary
    tensor for the cross algorithm.
    """
    row_sizes = tuple(int(n) for n in row_sizes)
    col_sizes = tuple(int(n) for n in col_sizes)
    paired_sizes = tuple(r * c for r, c in zip(row_sizes, col_sizes))

    def paired_oracle(idx: np.ndarray) -> np.ndarray:
        col_sz = np.asarray(col_sizes, dtype=np.int64)
        i_dig = idx // col_sz[None, :]
        j_dig = idx % col_sz[None, :]
        return entry_oracle(digits_to_flat(i_dig, row_sizes),
                            digits_to_flat(j_dig, col_sizes))

    counter = OracleCounter(paired_oracle)
    tensor_guess = guess.as_paired_tensor() if guess is not None else None
    tensor, stats = tt_cross_compress(counter, paired_sizes, eps, r_max,
                                      guess=tensor_guess, rng=rng, **kwargs)
    return TtMatrix.from_paired_tensor(tensor, row_sizes, col_sizes), stats
