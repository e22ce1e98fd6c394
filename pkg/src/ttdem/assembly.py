"""Contact-space problem assembly: Jacobian D, matrix N = D^T M^{-1} D, vector r, cones.

Per contact the three multipliers are ordered (normal, t1, t2). N is stored
block-sparse with 3x3 blocks; block (i, j) is nonzero only when contacts i and
j share a dynamic body (kinematic bodies have zero inverse mass and therefore
never couple contacts through N, although their Jacobian blocks are kept for
the r vector and for momentum bookkeeping).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import quaternions as quat
from .collision import ActiveSet, ContactKey
from .bodies import MassOperator, WorldState


class ContactJacobian:
    """Block-sparse D (6M x 3Nc): per contact a 6x3 block on each incident body."""

    def __init__(self, n_bodies: int, body_pairs: np.ndarray, blocks: np.ndarray):
        self.n_bodies = n_bodies
        self.body_pairs = body_pairs      # (Nc, 2) body indices, canonical order
        self.blocks = blocks              # (Nc, 2, 6, 3); slot 0 -> body_a (+d), slot 1 -> body_b (-d)

    @property
    def n_contacts(self) -> int:
        return self.body_pairs.shape[0]

    def apply(self, gamma: np.ndarray) -> np.ndarray:
        """D gamma: accumulate contact impulses into generalized momentum."""
        g = gamma.reshape(self.n_contacts, 3)
        contrib = np.einsum("csij,cj->csi", self.blocks, g)  # (Nc, 2, 6)
        out = np.zeros(6 * self.n_bodies)
        idx = (6 * self.body_pairs[:, :, None] + np.arange(6)[None, None, :]).reshape(-1)
        np.add.at(out, idx, contrib.reshape(-1))
        return out

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        """D^T v: relative contact-frame velocities."""
        vb = v.reshape(self.n_bodies, 6)[self.body_pairs]      # (Nc, 2, 6)
        return np.einsum("csij,csi->cj", self.blocks, vb).reshape(-1)

    def dense(self) -> np.ndarray:
        d = np.zeros((6 * self.n_bodies, 3 * self.n_contacts))
        for c in range(self.n_contacts):
            for s in range(2):
                b = self.body_pairs[c, s]
                d[6 * b:6 * b + 6, 3 * c:3 * c + 3] += self.blocks[c, s]
        return d


def build_contact_jacobian(world: WorldState, active: ActiveSet) -> ContactJacobian:
    nc = len(active)
    pairs = np.zeros((nc, 2), dtype=np.int64)
    blocks = np.zeros((nc, 2, 6, 3))
    for c, contact in enumerate(active.contacts):
        pairs[c] = (contact.body_a, contact.body_b)
        dirs = np.column_stack([contact.normal, contact.t1, contact.t2])  # (3, 3) columns d
        for s, (b, sign) in enumerate(((contact.body_a, 1.0), (contact.body_b, -1.0))):
            body = world.bodies[b]
            rot = quat.to_matrix(body.orientation)
            arm = contact.point - body.position
            blocks[c, s, :3, :] = sign * dirs
            # torque in the body frame: R^T ((p - x) x d)
            blocks[c, s, 3:, :] = sign * (rot.T @ np.cross(arm[None, :], dirs.T).T)
    return ContactJacobian(world.n_bodies, pairs, blocks)


class BlockSparseMatrix:
    """Symmetric block-sparse matrix with 3x3 blocks, hashed block access plus a CSR view."""

    def __init__(self, n_block_rows: int, rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray):
        order = np.lexsort((cols, rows))
        self.n_block_rows = n_block_rows
        self.rows = rows[order]
        self.cols = cols[order]
        self.blocks = blocks[order]
        self.index = {(int(r), int(c)): i for i, (r, c) in enumerate(zip(self.rows, self.cols))}
        self._csr = None

    @property
    def shape(self) -> tuple[int, int]:
        n = 3 * self.n_block_rows
        return (n, n)

    def block(self, i: int, j: int) -> np.ndarray | None:
        k = self.index.get((i, j))
        return None if k is None else self.blocks[k]

    def block_pattern(self) -> set[tuple[int, int]]:
        return set(self.index.keys())

    def diagonal_blocks(self) -> np.ndarray:
        out = np.zeros((self.n_block_rows, 3, 3))
        for i in range(self.n_block_rows):
            b = self.block(i, i)
            if b is not None:
                out[i] = b
        return out

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            nb = self.rows.shape[0]
            r = (3 * self.rows[:, None, None] + np.arange(3)[None, :, None])
            c = (3 * self.cols[:, None, None] + np.arange(3)[None, None, :])
            coo = sp.coo_matrix(
                (self.blocks.reshape(-1),
                 (np.broadcast_to(r, (nb, 3, 3)).reshape(-1),
                  np.broadcast_to(c, (nb, 3, 3)).reshape(-1))),
                shape=self.shape)
            self._csr = coo.tocsr()
        return self._csr

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_csr() @ x

    def dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def one_norm(self) -> float:
        return float(np.max(np.abs(self.to_csr()).sum(axis=0)))


def write_coordinate_text(matrix: BlockSparseMatrix, path) -> None:
    """Dump entries as 'row col value' lines sorted by (row, col)."""
    csr = matrix.to_csr().tocoo()
    order = np.lexsort((csr.col, csr.row))
    with open(path, "w", newline="\n") as fh:
        for r, c, v in zip(csr.row[order], csr.col[order], csr.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


@dataclass
class CcpProblem:
    N: BlockSparseMatrix
    r: np.ndarray
    mu: np.ndarray                 # per-contact friction coefficients
    keys: list[ContactKey]

    @property
    def n_contacts(self) -> int:
        return self.mu.shape[0]

    def objective(self, gamma: np.ndarray) -> float:
        return float(0.5 * gamma @ self.N.matvec(gamma) + self.r @ gamma)


def assemble_N(jacobian: ContactJacobian, mass: MassOperator) -> BlockSparseMatrix:
    """N = D^T M^{-1} D accumulated body-by-body over contacts sharing that body."""
    nc = jacobian.n_contacts
    inv6 = mass.inv_diag6.reshape(-1, 6)
    incident: dict[int, list[tuple[int, int]]] = {}
    for c in range(nc):
        for s in range(2):
            b = int(jacobian.body_pairs[c, s])
            if inv6[b].any():
                incident.setdefault(b, []).append((c, s))

    left_c, left_s, right_c, right_s, body = [], [], [], [], []
    for b, entries in incident.items():
        for ci, si in entries:
            for cj, sj in entries:
                left_c.append(ci)
                left_s.append(si)
                right_c.append(cj)
                right_s.append(sj)
                body.append(b)
    if left_c:
        bl = jacobian.blocks[left_c, left_s]     # (n, 6, 3)
        br = jacobian.blocks[right_c, right_s]
        w = inv6[body]                           # (n, 6)
        contrib = np.einsum("nki,nk,nkj->nij", bl, w, br)
        keys = np.asarray(left_c, dtype=np.int64) * nc + np.asarray(right_c, dtype=np.int64)
        uniq, inverse = np.unique(keys, return_inverse=True)
        blocks = np.zeros((uniq.shape[0], 3, 3))
        np.add.at(blocks, inverse, contrib)
        rows = uniq // nc
        cols = uniq % nc
    else:
        rows = np.zeros(0, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64)
        blocks = np.zeros((0, 3, 3))
    # keep explicit (possibly zero) diagonal blocks so solvers always see them
    have_diag = set(map(int, rows[rows == cols]))
    missing = [i for i in range(nc) if i not in have_diag]
    if missing:
        rows = np.concatenate([rows, np.asarray(missing, dtype=np.int64)])
        cols = np.concatenate([cols, np.asarray(missing, dtype=np.int64)])
        blocks = np.concatenate([blocks, np.zeros((len(missing), 3, 3))])
    return BlockSparseMatrix(nc, rows, cols, blocks)


def assemble_r(jacobian: ContactJacobian, mass: MassOperator, k: np.ndarray,
               gaps: np.ndarray, dt: float, penetration_clamp: float | None = None) -> np.ndarray:
    """r = b + D^T M^{-1} k with kinematic entries of k passed through as velocities.

    b_i = (Phi_i / dt, 0, 0); an optional clamp bounds Phi below by -penetration_clamp
    so that deep penetrations do not inject unbounded separation velocity.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    phi = np.asarray(gaps, dtype=float)
    if penetration_clamp is not None:
        phi = np.maximum(phi, -abs(penetration_clamp))
    r = jacobian.apply_transpose(mass.free_velocity(k))
    r = r.reshape(-1, 3)
    r[:, 0] += phi / dt
    return r.reshape(-1)


def assemble_problem(world: WorldState, active: ActiveSet, jacobian: ContactJacobian,
                     k: np.ndarray, dt: float, mu: float | np.ndarray,
                     penetration_clamp: float | None = None) -> CcpProblem:
    mass = world.mass_operator()
    n = assemble_N(jacobian, mass)
    gaps = np.array([c.gap for c in active.contacts])
    r = assemble_r(jacobian, mass, k, gaps, dt, penetration_clamp)
    mu_vec = np.full(len(active), mu, dtype=float) if np.isscalar(mu) else np.asarray(mu, dtype=float)
    return CcpProblem(n, r, mu_vec, active.keys)


def project_cone(gamma_i: np.ndarray, mu: float) -> np.ndarray:
    """Euclidean projection of a single (n, t1, t2) triple onto the friction cone."""
    gn = gamma_i[0]
    gt = np.linalg.norm(gamma_i[1:])
    if gt <= mu * gn:
        return gamma_i.copy()
    if mu * gt <= -gn:
        return np.zeros(3)
    coef = (gn + mu * gt) / (1.0 + mu * mu)
    out = np.empty(3)
    out[0] = coef
    out[1:] = (mu * coef / gt) * gamma_i[1:] if gt > 0 else 0.0
    return out


def project_cones(gamma: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Vectorized cone projection over all contacts."""
    g = gamma.reshape(-1, 3).copy()
    gn = g[:, 0]
    gt = np.linalg.norm(g[:, 1:], axis=1)
    inside = gt <= mu * gn
    polar = mu * gt <= -gn
    surface = ~(inside | polar)
    g[polar] = 0.0
    if np.any(surface):
        coef = (gn[surface] + mu[surface] * gt[surface]) / (1.0 + mu[surface] ** 2)
        scale = np.where(gt[surface] > 0, mu[surface] * coef / np.maximum(gt[surface], 1e-300), 0.0)
        g[surface, 0] = coef
        g[surface, 1:] *= scale[:, None]
    return g.reshape(-1)


def ccp_residual(gamma: np.ndarray, problem: CcpProblem) -> float:
    """Fixed-point residual ||gamma - Pi(gamma - alpha (N gamma + r))||_inf, alpha = 1/||N||_1."""
    norm1 = problem.N.one_norm()
    alpha = 1.0 / norm1 if norm1 > 0 else 1.0
    step = gamma - alpha * (problem.N.matvec(gamma) + problem.r)
    return float(np.max(np.abs(gamma - project_cones(step, problem.mu)), initial=0.0))
