"""Contact detection: gap functions, contact frames, and the active set A(q, delta).

Contacts are reported for sphere-sphere, sphere-plane and sphere-box pairs with
signed gap <= delta. Output ordering is deterministic: contacts are sorted by
their persistent key (canonical body pair plus geometric feature tag), so
repeated detection on the same world is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quaternions as quat
from .bodies import Box, Plane, Sphere, WorldState

ContactKey = tuple[int, int, int]


@dataclass
class Contact:
    body_a: int                 # i1 of the canonical pair (i1 < i2)
    body_b: int                 # i2
    point: np.ndarray           # world contact point
    normal: np.ndarray          # unit, points from body_b toward body_a
    t1: np.ndarray
    t2: np.ndarray
    gap: float                  # signed, negative means penetration
    key: ContactKey
    large_geometry: bool = False  # involves a wall/container-scale kinematic shape


@dataclass
class ActiveSet:
    contacts: list[Contact]
    threshold: float

    def __len__(self) -> int:
        return len(self.contacts)

    @property
    def keys(self) -> list[ContactKey]:
        return [c.key for c in self.contacts]


def contact_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangents for a unit normal.

    t1 = normalize(n x e_a) with e_a the coordinate axis minimizing |n . e_a|
    (lowest axis index on ties), t2 = n x t1.
    """
    nn = np.linalg.norm(n)
    if abs(nn - 1.0) > 1e-9:
        raise ValueError("normal must be unit length")
    a = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[a] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def gap_sphere_plane(center: np.ndarray, radius: float, plane_point: np.ndarray,
                     plane_normal: np.ndarray) -> float:
    return float(np.dot(plane_normal, center - plane_point)) - radius


def gap_sphere_sphere(c1: np.ndarray, r1: float, c2: np.ndarray, r2: float) -> float:
    return float(np.linalg.norm(c1 - c2)) - r1 - r2


def _closest_point_on_box(local: np.ndarray, half: np.ndarray) -> tuple[np.ndarray, int, bool]:
    """Closest box-surface point to a local-frame query point, with a feature tag.

    The tag encodes the per-axis clamp signature (-1/0/+1 -> 0/1/2 digits base 3),
    so face, edge and corner features get distinct persistent ids.
    """
    inside = bool(np.all(np.abs(local) <= half))
    if not inside:
        clamped = np.clip(local, -half, half)
        sig = np.sign(local) * (np.abs(local) > half)
    else:
        # push out through the nearest face
        dist = half - np.abs(local)
        axis = int(np.argmin(dist))
        clamped = local.copy()
        clamped[axis] = np.sign(local[axis]) * half[axis] if local[axis] != 0.0 else half[axis]
        sig = np.zeros(3)
        sig[axis] = np.sign(clamped[axis])
    tag = int((sig[0] + 1) + 3 * (sig[1] + 1) + 9 * (sig[2] + 1))
    return clamped, tag, inside


def _sphere_box_contact(center, radius, box_pos, box_rot, half):
    local = box_rot.T @ (center - box_pos)
    surface_local, tag, inside = _closest_point_on_box(local, half)
    surface = box_pos + box_rot @ surface_local
    d = center - surface
    dist = np.linalg.norm(d)
    if inside:
        # center inside the slab: outward direction through the chosen face
        axis = int(np.argmax(np.abs(surface_local - local)))
        e = np.zeros(3)
        e[axis] = np.sign(surface_local[axis])
        n_out = box_rot @ e
        gap = -dist - radius
    else:
        if dist < 1e-14:
            return None
        n_out = d / dist
        gap = dist - radius
    return gap, n_out, surface, tag


def _plane_world(body) -> tuple[np.ndarray, np.ndarray]:
    n = quat.rotate(body.orientation, np.array([0.0, 0.0, 1.0]))
    return body.position, n


def _make_contact(i, j, bodies, gap, n_from_j_to_i, point, tag, large):
    """Canonicalize pair ordering; normal stored from body_b toward body_a."""
    if i < j:
        a, b, n = i, j, n_from_j_to_i
    else:
        a, b, n = j, i, -n_from_j_to_i
    t1, t2 = contact_frame(n)
    return Contact(a, b, np.asarray(point, dtype=float), n, t1, t2, float(gap),
                   key=(a, b, tag), large_geometry=large)


def _grid_candidate_pairs(centers: np.ndarray, radii: np.ndarray, delta: float) -> list[tuple[int, int]]:
    """Uniform-grid broadphase over spheres; cell size keyed on the largest radius."""
    n = centers.shape[0]
    if n < 2:
        return []
    cell = 2.0 * float(radii.max()) + delta
    keys = np.floor(centers / cell).astype(np.int64)
    grid: dict[tuple[int, int, int], list[int]] = {}
    for idx in range(n):
        grid.setdefault(tuple(keys[idx]), []).append(idx)
    # half neighborhood so each cell pair is visited once
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    offsets = [o for o in offsets if o > (0, 0, 0)]
    pairs = []
    for ck, members in grid.items():
        for ai in range(len(members)):
            for bi in range(ai + 1, len(members)):
                pairs.append((members[ai], members[bi]))
        for off in offsets:
            other = grid.get((ck[0] + off[0], ck[1] + off[1], ck[2] + off[2]))
            if other:
                for a in members:
                    for b in other:
                        pairs.append((a, b))
    return pairs


def detect_contacts(world: WorldState, delta: float) -> ActiveSet:
    """All contacts with gap <= delta, deterministically ordered by key."""
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    bodies = world.bodies
    sphere_ids = [i for i, b in enumerate(bodies) if isinstance(b.shape, Sphere)]
    other_ids = [i for i, b in enumerate(bodies) if not isinstance(b.shape, Sphere)]

    contacts: list[Contact] = []

    if sphere_ids:
        centers = np.array([bodies[i].position for i in sphere_ids])
        radii = np.array([bodies[i].shape.radius for i in sphere_ids])
        for ai, bi in _grid_candidate_pairs(centers, radii, delta):
            i, j = sphere_ids[ai], sphere_ids[bi]
            if bodies[i].kinematic and bodies[j].kinematic:
                continue
            d = centers[ai] - centers[bi]
            dist = np.linalg.norm(d)
            gap = dist - radii[ai] - radii[bi]
            if gap <= delta and dist > 1e-14:
                n = d / dist  # from sphere j toward sphere i
                point = centers[bi] + (radii[bi] + 0.5 * gap) * n
                contacts.append(_make_contact(i, j, bodies, gap, n, point, 0, False))

        for j in other_ids:
            bj = bodies[j]
            large = bj.kinematic
            if isinstance(bj.shape, Plane):
                p0, pn = _plane_world(bj)
                for ai, i in enumerate(sphere_ids):
                    if bodies[i].kinematic and bj.kinematic:
                        continue
                    gap = gap_sphere_plane(centers[ai], radii[ai], p0, pn)
                    if gap <= delta:
                        point = centers[ai] - (radii[ai] + 0.5 * gap) * pn
                        contacts.append(_make_contact(i, j, bodies, gap, pn, point, 0, large))
            elif isinstance(bj.shape, Box):
                rot = quat.to_matrix(bj.orientation)
                half = np.asarray(bj.shape.half_extents, dtype=float)
                for ai, i in enumerate(sphere_ids):
                    if bodies[i].kinematic and bj.kinematic:
                        continue
                    hit = _sphere_box_contact(centers[ai], radii[ai], bj.position, rot, half)
                    if hit is None:
                        continue
                    gap, n_out, surface, tag = hit
                    if gap <= delta:
                        contacts.append(_make_contact(i, j, bodies, gap, n_out, surface, tag, large))

    contacts.sort(key=lambda c: c.key)
    seen: set[ContactKey] = set()
    unique = []
    for c in contacts:
        if c.key not in seen:
            seen.add(c.key)
            unique.append(c)
    return ActiveSet(unique, delta)


def brute_force_pairs(world: WorldState, delta: float) -> set[tuple[int, int]]:
    """All-pairs sphere candidate oracle used to validate the grid broadphase."""
    bodies = world.bodies
    ids = [i for i, b in enumerate(bodies) if isinstance(b.shape, Sphere)]
    out = set()
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            gap = gap_sphere_sphere(bodies[i].position, bodies[i].shape.radius,
                                    bodies[j].position, bodies[j].shape.radius)
            if gap <= delta:
                out.add((min(i, j), max(i, j)))
    return out
