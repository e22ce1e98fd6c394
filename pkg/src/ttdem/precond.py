"""TT-compressed approximate inverse of the Schur matrix as a Krylov preconditioner.

The Schur matrix is permuted into hierarchy slot order and padded with identity
rows/columns on dummy slots, making it a permutation of blockdiag(S, I) whose
size stays a fixed power of two while contacts come and go. Compression and
inversion warm-start from the previous factorization whenever the hierarchy
version still matches, which covers both Newton iterations within a timestep
(S_{k+1} = S_k + block-diagonal update) and persistent contact sets across
timesteps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hierarchy import ContactHierarchy
from .tt import TtMatrix, tt_cross_matrix, tt_invert_als
from .tt.als import AlsStats
from .tt.cross import CrossStats


def padded_schur_csr(rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray,
                     slots: np.ndarray, capacity: int) -> sp.csr_matrix:
    """Permute block entries into slot order and pad dummies with the identity."""
    nb = rows.shape[0]
    n = 3 * capacity
    srow = slots[rows]
    scol = slots[cols]
    rr = (3 * srow[:, None, None] + np.arange(3)[None, :, None])
    cc = (3 * scol[:, None, None] + np.arange(3)[None, None, :])
    occupied = np.zeros(capacity, dtype=bool)
    occupied[slots] = True
    dummy_rows = 3 * np.flatnonzero(~occupied)
    eye_idx = (dummy_rows[:, None] + np.arange(3)[None, :]).reshape(-1)
    data = np.concatenate([blocks.reshape(-1), np.ones(eye_idx.shape[0])])
    coo_r = np.concatenate([np.broadcast_to(rr, (nb, 3, 3)).reshape(-1), eye_idx])
    coo_c = np.concatenate([np.broadcast_to(cc, (nb, 3, 3)).reshape(-1), eye_idx])
    return sp.coo_matrix((data, (coo_r, coo_c)), shape=(n, n)).tocsr()


def tensorize_schur(schur_or_csr, hierarchy: ContactHierarchy,
                    slots: np.ndarray | None = None):
    """Entry oracle over the permuted, padded Schur matrix.

    Accepts either a SchurSystem-like object exposing block_entries() plus the
    per-contact slot array, or a prebuilt padded CSR. Dummy slots read from the
    identity. Returns (oracle(rows, cols) -> values, mode_sizes).
    """
    if sp.issparse(schur_or_csr):
        padded = schur_or_csr.tocsr()
    else:
        rows, cols, blocks = schur_or_csr.block_entries()
        if slots is None:
            raise ValueError("slot array required when passing block entries")
        padded = padded_schur_csr(rows, cols, blocks, slots, hierarchy.capacity)
    n = 3 * hierarchy.capacity
    if padded.shape != (n, n):
        raise ValueError("padded matrix size does not match the hierarchy")

    def oracle(r: np.ndarray, c: np.ndarray) -> np.ndarray:
        if np.any(r >= n) or np.any(c >= n):
            raise IndexError("tensorized index out of range")
        return np.asarray(padded[r, c]).ravel()

    return oracle, hierarchy.row_modes


@dataclass
class FactorCache:
    matrix_tt: TtMatrix
    inverse_tt: TtMatrix
    hierarchy_version: int
    capacity: int
    low_quality: bool
    build_time: float
    cross_stats: CrossStats
    als_stats: AlsStats
    warm_started: bool

    def valid_for(self, hierarchy: ContactHierarchy) -> bool:
        return (self.hierarchy_version == hierarchy.version
                and self.capacity == hierarchy.capacity)

    def save(self, path_prefix: str) -> None:
        self.matrix_tt.save(f"{path_prefix}.fwd.tt")
        self.inverse_tt.save(f"{path_prefix}.inv.tt")

    @classmethod
    def load(cls, path_prefix: str, hierarchy: ContactHierarchy) -> "FactorCache":
        fwd = TtMatrix.load(f"{path_prefix}.fwd.tt")
        inv = TtMatrix.load(f"{path_prefix}.inv.tt")
        return cls(fwd, inv, hierarchy.version, hierarchy.capacity, False, 0.0,
                   CrossStats(), AlsStats(), False)


def compress_and_invert(schur, hierarchy: ContactHierarchy, slots: np.ndarray,
                        cache: FactorCache | None, eps: float, r_max: int,
                        rng=None) -> FactorCache:
    """TT-compress the padded Schur matrix and build its approximate inverse.

    A still-valid cache provides warm starts for both sweep algorithms; a
    mismatched hierarchy snapshot forces the cold path.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    t0 = time.perf_counter()
    oracle, modes = tensorize_schur(schur, hierarchy, slots)
    warm = cache is not None and cache.valid_for(hierarchy)
    guess_fwd = cache.matrix_tt if warm else None
    guess_inv = cache.inverse_tt if warm else None
    matrix_tt, cross_stats = tt_cross_matrix(oracle, modes, modes, eps, r_max,
                                             guess=guess_fwd, rng=rng)
    inverse_tt, als_stats = tt_invert_als(matrix_tt, eps, r_max, guess=guess_inv,
                                          rng=rng)
    return FactorCache(
        matrix_tt=matrix_tt, inverse_tt=inverse_tt,
        hierarchy_version=hierarchy.version, capacity=hierarchy.capacity,
        low_quality=als_stats.low_quality,
        build_time=time.perf_counter() - t0,
        cross_stats=cross_stats, als_stats=als_stats, warm_started=warm)


def pad_residual(residual: np.ndarray, slots: np.ndarray, capacity: int) -> np.ndarray:
    z = np.zeros(3 * capacity)
    idx = (3 * slots[:, None] + np.arange(3)[None, :]).reshape(-1)
    z[idx] = residual
    return z


def unpad_result(padded: np.ndarray, slots: np.ndarray) -> np.ndarray:
    idx = (3 * slots[:, None] + np.arange(3)[None, :]).reshape(-1)
    return padded[idx]


def tt_precondition_apply(cache: FactorCache, hierarchy: ContactHierarchy,
                          slots: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Apply the TT approximate inverse: pad, TT matvec, unpad.

    Identity padding means dummy coordinates stay zero and never feed back
    into occupied coordinates.
    """
    if not cache.valid_for(hierarchy):
        raise ValueError("factor cache does not match the live hierarchy")
    z = pad_residual(residual, slots, hierarchy.capacity)
    y = cache.inverse_tt.matvec(z)
    return unpad_result(y, slots)
