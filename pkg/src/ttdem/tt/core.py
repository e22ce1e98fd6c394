"""Tensor-train containers and exact TT arithmetic.

A TT tensor stores a chain of 3-way cores G_k (r_{k-1}, n_k, r_k) with
r_0 = r_d = 1; the entry at (i_1, ..., i_d) is the product
G_1[0, i_1, :] @ G_2[:, i_2, :] @ ... @ G_d[:, i_d, 0]. Flattened indices are
row-major (i_1 slowest), matching numpy's C-order reshape.

A TT matrix pairs a row and a column index per level, stored as 4-way cores
(r_{k-1}, row_k, col_k, r_k). Reshaping the pair (row_k, col_k) into a single
mode of size row_k*col_k recovers an ordinary TT tensor over the paired index
b_k = row_k * col_k + col index, which is how compression routines see it.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"TTDM"
_VERSION = 1


def _chop_rank(s: np.ndarray, delta: float, r_max: int | None = None) -> int:
    """Smallest rank whose discarded singular-value tail has norm <= delta."""
    if s.size == 0:
        return 1
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))
    discard = int(np.searchsorted(tail, delta, side="right"))
    r = max(1, s.size - discard)
    if r_max is not None:
        r = min(r, r_max)
    return r


def flat_to_digits(flat: np.ndarray, sizes) -> np.ndarray:
    """Row-major multi-index digits for flattened indices; shape (B, d)."""
    flat = np.asarray(flat, dtype=np.int64)
    d = len(sizes)
    out = np.empty((flat.shape[0], d), dtype=np.int64)
    rest = flat.copy()
    for k in range(d - 1, -1, -1):
        out[:, k] = rest % sizes[k]
        rest //= sizes[k]
    return out


def digits_to_flat(digits: np.ndarray, sizes) -> np.ndarray:
    flat = np.zeros(digits.shape[0], dtype=np.int64)
    for k in range(len(sizes)):
        flat = flat * sizes[k] + digits[:, k]
    return flat


class TtTensor:
    def __init__(self, cores: list[np.ndarray]):
        self.cores = [np.asarray(c, dtype=float) for c in cores]
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for a, b in zip(self.cores, self.cores[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("adjacent core ranks do not match")

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores[:-1])

    @property
    def storage_size(self) -> int:
        return int(sum(c.size for c in self.cores))

    def copy(self) -> "TtTensor":
        return TtTensor([c.copy() for c in self.cores])

    def full(self) -> np.ndarray:
        out = self.cores[0].reshape(self.cores[0].shape[1], -1)
        for core in self.cores[1:]:
            r0, n, r1 = core.shape
            out = out @ core.reshape(r0, n * r1)
            out = out.reshape(-1, r1)
        return out.reshape(self.mode_sizes)

    def eval_batch(self, idx: np.ndarray) -> np.ndarray:
        """Entries at the given multi-indices, shape (B, d) -> (B,)."""
        idx = np.asarray(idx, dtype=np.int64)
        v = self.cores[0][0, idx[:, 0], :]
        for k in range(1, self.d):
            g = self.cores[k][:, idx[:, k], :]
            v = np.einsum("br,rbs->bs", v, g)
        return v[:, 0]

    def entry(self, idx) -> float:
        return float(self.eval_batch(np.asarray(idx, dtype=np.int64)[None, :])[0])

    def norm(self) -> float:
        cores = right_orthogonalize([c.copy() for c in self.cores])
        return float(np.linalg.norm(cores[0]))

    def dot(self, other: "TtTensor") -> float:
        w = np.ones((1, 1))
        for a, b in zip(self.cores, other.cores):
            w = np.einsum("ab,anr,bns->rs", w, a, b)
        return float(w[0, 0])

    def __mul__(self, scalar: float) -> "TtTensor":
        out = self.copy()
        out.cores[0] = out.cores[0] * float(scalar)
        return out

    __rmul__ = __mul__

    def __add__(self, other: "TtTensor") -> "TtTensor":
        return tt_add(self, other)

    def __sub__(self, other: "TtTensor") -> "TtTensor":
        return tt_add(self, other * -1.0)

    def save(self, path) -> None:
        _save(path, kind=0, mode_meta=[self.mode_sizes], cores=self.cores)

    @classmethod
    def load(cls, path) -> "TtTensor":
        kind, meta, cores = _load(path)
        if kind != 0:
            raise ValueError("file holds a TT matrix, not a TT tensor")
        return cls(cores)


class TtMatrix:
    def __init__(self, cores: list[np.ndarray]):
        self.cores = [np.asarray(c, dtype=float) for c in cores]
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise ValueError("boundary ranks must be 1")

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def row_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[3] for c in self.cores[:-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (int(np.prod(self.row_sizes)), int(np.prod(self.col_sizes)))

    @property
    def storage_size(self) -> int:
        return int(sum(c.size for c in self.cores))

    def copy(self) -> "TtMatrix":
        return TtMatrix([c.copy() for c in self.cores])

    def as_paired_tensor(self) -> TtTensor:
        return TtTensor([c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3])
                         for c in self.cores])

    @classmethod
    def from_paired_tensor(cls, tensor: TtTensor, row_sizes, col_sizes) -> "TtMatrix":
        cores = []
        for core, nr, nc in zip(tensor.cores, row_sizes, col_sizes):
            if core.shape[1] != nr * nc:
                raise ValueError("paired mode size mismatch")
            cores.append(core.reshape(core.shape[0], nr, nc, core.shape[2]))
        return cls(cores)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Dense matrix-vector product, contracting one core at a time.

        Cost O(r^2 n N log N) for quantized mode sizes; produced row indices
        accumulate behind the untouched column block so the output comes out
        in row-major order.
        """
        cols = self.col_sizes
        n_col = int(np.prod(cols))
        if x.shape[0] != n_col:
            raise ValueError("vector length does not match matrix columns")
        rest = n_col // cols[0]
        z = x.reshape(1, cols[0], rest, 1)
        for k, core in enumerate(self.cores):
            z = np.einsum("anmb,amRN->bRNn", core, z, optimize=True)
            r1 = core.shape[3]
            n_done = z.shape[2] * z.shape[3]
            if k + 1 < self.d:
                m_next = cols[k + 1]
                z = z.reshape(r1, z.shape[1], n_done)
                z = z.reshape(r1, m_next, z.shape[1] // m_next, n_done)
        return z.reshape(-1)

    def eval_batch(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        ri = flat_to_digits(rows, self.row_sizes)
        ci = flat_to_digits(cols, self.col_sizes)
        v = self.cores[0][0, ri[:, 0], ci[:, 0], :]
        for k in range(1, self.d):
            g = self.cores[k][:, ri[:, k], ci[:, k], :]
            v = np.einsum("br,rbs->bs", v, g)
        return v[:, 0]

    def full(self) -> np.ndarray:
        dense = self.as_paired_tensor().full()
        d = self.d
        dense = dense.reshape([s for rc in zip(self.row_sizes, self.col_sizes) for s in rc])
        perm = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
        return dense.transpose(perm).reshape(self.shape)

    def save(self, path) -> None:
        _save(path, kind=1, mode_meta=[self.row_sizes, self.col_sizes], cores=self.cores)

    @classmethod
    def load(cls, path) -> "TtMatrix":
        kind, meta, cores = _load(path)
        if kind != 1:
            raise ValueError("file holds a TT tensor, not a TT matrix")
        return cls(cores)

    @classmethod
    def identity(cls, mode_sizes) -> "TtMatrix":
        cores = []
        for n in mode_sizes:
            cores.append(np.eye(n).reshape(1, n, n, 1))
        return cls(cores)

    @classmethod
    def from_dense(cls, matrix: np.ndarray, row_sizes, col_sizes, eps: float = 1e-14,
                   r_max: int | None = None) -> "TtMatrix":
        """Tensorize a dense matrix over paired level indices and TT-decompose."""
        d = len(row_sizes)
        a = np.asarray(matrix, dtype=float).reshape(tuple(row_sizes) + tuple(col_sizes))
        perm = [x for k in range(d) for x in (k, d + k)]
        paired = a.transpose(perm).reshape([r * c for r, c in zip(row_sizes, col_sizes)])
        tensor = tt_decompose_full(paired, eps, r_max=r_max)
        return cls.from_paired_tensor(tensor, row_sizes, col_sizes)


def tt_random(mode_sizes, ranks, rng) -> TtTensor:
    """Gaussian random TT with the given internal ranks (len = d-1)."""
    full_ranks = [1] + list(ranks) + [1]
    cores = [rng.standard_normal((full_ranks[k], n, full_ranks[k + 1]))
             for k, n in enumerate(mode_sizes)]
    return TtTensor(cores)


def tt_ones(mode_sizes) -> TtTensor:
    return TtTensor([np.ones((1, n, 1)) for n in mode_sizes])


def right_orthogonalize(cores: list[np.ndarray]) -> list[np.ndarray]:
    """Make every core but the first right-orthogonal (in place on the list)."""
    for k in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, rfac = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        rnew = q.shape[1]
        cores[k] = q.T.reshape(rnew, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], rfac.T, axes=([2], [0]))
    return cores


def tt_decompose_full(tensor: np.ndarray, eps: float, r_max: int | None = None) -> TtTensor:
    """Sequential truncated SVD of the unfolding matrices (dense input).

    Each step truncates at eps/sqrt(d-1) times the input Frobenius norm, so
    the total relative reconstruction error is at most eps.
    """
    tensor = np.asarray(tensor, dtype=float)
    if tensor.ndim < 2:
        raise ValueError("need at least two modes")
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = tensor.ndim
    sizes = tensor.shape
    delta = eps * np.linalg.norm(tensor) / np.sqrt(d - 1)
    cores = []
    r_prev = 1
    mat = tensor.reshape(sizes[0], -1)
    for k in range(d - 1):
        mat = mat.reshape(r_prev * sizes[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = _chop_rank(s, delta, r_max)
        cores.append(u[:, :r].reshape(r_prev, sizes[k], r))
        mat = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(mat.reshape(r_prev, sizes[-1], 1))
    return TtTensor(cores)


def tt_round(tensor: TtTensor, eps: float, r_max: int | None = None) -> TtTensor:
    """Re-orthogonalize and truncate; relative error <= eps, ranks never grow."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    cores = right_orthogonalize([c.copy() for c in tensor.cores])
    norm = np.linalg.norm(cores[0])
    if norm == 0.0:
        return TtTensor([np.zeros((1, n, 1)) for n in tensor.mode_sizes])
    delta = eps * norm / max(np.sqrt(tensor.d - 1), 1.0)
    for k in range(tensor.d - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = np.linalg.svd(cores[k].reshape(r0 * n, r1), full_matrices=False)
        cap = min(cores[k].shape[2], r0 * n)
        if r_max is not None:
            cap = min(cap, r_max)
        r = _chop_rank(s, delta, cap)
        cores[k] = u[:, :r].reshape(r0, n, r)
        w = s[:r, None] * vt[:r]
        cores[k + 1] = np.tensordot(w, cores[k + 1], axes=([1], [0]))
    return TtTensor(cores)


def tt_matrix_round(matrix: TtMatrix, eps: float) -> TtMatrix:
    return TtMatrix.from_paired_tensor(tt_round(matrix.as_paired_tensor(), eps),
                                       matrix.row_sizes, matrix.col_sizes)


def tt_add(a: TtTensor, b: TtTensor) -> TtTensor:
    """Exact sum; ranks add."""
    if a.mode_sizes != b.mode_sizes:
        raise ValueError("mode size mismatch")
    if a.d == 1:
        return TtTensor([a.cores[0] + b.cores[0]])
    cores = []
    for k in range(a.d):
        ca, cb = a.cores[k], b.cores[k]
        ra0, n, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        if k == 0:
            core = np.concatenate([ca, cb], axis=2)
        elif k == a.d - 1:
            core = np.concatenate([ca, cb], axis=0)
        else:
            core = np.zeros((ra0 + rb0, n, ra1 + rb1))
            core[:ra0, :, :ra1] = ca
            core[ra0:, :, ra1:] = cb
        cores.append(core)
    return TtTensor(cores)


def tt_matrix_add(a: TtMatrix, b: TtMatrix) -> TtMatrix:
    if a.row_sizes != b.row_sizes or a.col_sizes != b.col_sizes:
        raise ValueError("mode size mismatch")
    return TtMatrix.from_paired_tensor(tt_add(a.as_paired_tensor(), b.as_paired_tensor()),
                                       a.row_sizes, a.col_sizes)


# ---------------------------------------------------------------------------
# Serialization: self-describing binary layout for factorization caching.

def _save(path, kind: int, mode_meta, cores) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BBI", _VERSION, kind, len(cores)))
        for sizes in mode_meta:
            fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        ranks = [1] + [c.shape[-1] for c in cores]
        fh.write(struct.pack(f"<{len(ranks)}I", *ranks))
        for c in cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def _load(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a TT binary file")
        version, kind, d = struct.unpack("<BBI", fh.read(6))
        if version != _VERSION:
            raise ValueError(f"unsupported TT binary version {version}")
        n_meta = 2 if kind == 1 else 1
        meta = []
        for _ in range(n_meta):
            meta.append(struct.unpack(f"<{d}I", fh.read(4 * d)))
        ranks = struct.unpack(f"<{d + 1}I", fh.read(4 * (d + 1)))
        cores = []
        for k in range(d):
            if kind == 1:
                shape = (ranks[k], meta[0][k], meta[1][k], ranks[k + 1])
            else:
                shape = (ranks[k], meta[0][k], ranks[k + 1])
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            cores.append(data.reshape(shape).copy())
    return kind, meta, cores
