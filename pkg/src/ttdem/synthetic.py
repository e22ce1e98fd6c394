"""Synthetic structured operators for benchmarks and solver validation."""

from __future__ import annotations

import numpy as np


def tridiagonal_oracle(diag: float = 3.0, off: float = -1.0):
    """Vectorized entry oracle of the SPD tridiagonal Toeplitz matrix.

    diag(2+c, ...) with -1 off-diagonals is diagonally dominant for c > 0 and
    has small quantized-TT ranks at every size, which makes it a clean probe
    for precompute-cost scaling.
    """
    def entries(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        d = np.abs(rows - cols)
        return np.where(d == 0, diag, np.where(d == 1, off, 0.0))
    return entries


def tridiagonal_dense(n: int, diag: float = 3.0, off: float = -1.0) -> np.ndarray:
    a = diag * np.eye(n)
    a += off * (np.eye(n, k=1) + np.eye(n, k=-1))
    return a


def qtt_modes(n: int) -> tuple[int, ...]:
    """Binary mode sizes for a power-of-two dimension."""
    if n < 2 or n & (n - 1):
        raise ValueError("dimension must be a power of two >= 2")
    return (2,) * int(np.log2(n))
