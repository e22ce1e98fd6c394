"""Unit-quaternion helpers for rigid-body orientation, (w, x, y, z) layout."""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def from_rotation_vector(v: np.ndarray) -> np.ndarray:
    """Quaternion exponential: rotation by |v| radians about v/|v|."""
    angle = np.linalg.norm(v)
    if angle < 1e-300:
        return IDENTITY.copy()
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * (v / angle)))


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the rotation encoded by q to a 3-vector."""
    return to_matrix(q) @ v


def to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def derivative(q: np.ndarray, omega_body: np.ndarray) -> np.ndarray:
    """Rate map dq/dt = 0.5 * q ⊗ (0, omega) for body-frame angular velocity."""
    return 0.5 * multiply(q, np.concatenate(([0.0], omega_body)))


def integrate(q: np.ndarray, omega_body: np.ndarray, dt: float, exact: bool = False) -> np.ndarray:
    """Advance orientation by dt; first-order rate map by default, exact exponential on request.

    Both variants return a unit quaternion.
    """
    if exact:
        return normalize(multiply(q, from_rotation_vector(dt * omega_body)))
    return normalize(q + dt * derivative(q, omega_body))
