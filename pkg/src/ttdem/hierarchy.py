"""Spatial contact hierarchy mapping contacts to padded tensor leaf slots.

Contacts are ordered by recursive spatial bisection (longest axis, median cut,
Morton-order tie-break) and padded with dummy slots to the next power of two,
so the permuted Schur matrix is a permutation of blockdiag(S, I). Contacts
against large static geometry (walls, driven tools) live in a dedicated
trailing subtree. Across timesteps the assignment is sticky: persistent
contacts keep their slot while they stay near it, vanished contacts free their
slot as a dummy, and new contacts take over the nearest free slot; when that
bookkeeping degrades (too much re-indexing, or no free slots) the caller gets
a reset signal and rebuilds from scratch.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .collision import ActiveSet, ContactKey

_version_counter = itertools.count(1)


def next_power_of_two(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def _morton_codes(points: np.ndarray) -> np.ndarray:
    """21-bit-per-axis interleaved codes over the points' bounding box."""
    lo = points.min(axis=0)
    span = np.maximum(points.max(axis=0) - lo, 1e-12)
    q = np.clip(((points - lo) / span * ((1 << 21) - 1)).astype(np.uint64), 0,
                (1 << 21) - 1)
    codes = np.zeros(points.shape[0], dtype=np.uint64)
    for bit in range(21):
        for axis in range(3):
            codes |= ((q[:, axis] >> np.uint64(bit)) & np.uint64(1)) \
                << np.uint64(3 * bit + axis)
    return codes


def spatial_bisection_order(points: np.ndarray) -> np.ndarray:
    """Deterministic ordering by recursive longest-axis median splits."""
    n = points.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    morton = _morton_codes(points)
    order = np.empty(n, dtype=np.int64)
    cursor = 0

    def recurse(idx: np.ndarray) -> None:
        nonlocal cursor
        if idx.shape[0] <= 1:
            order[cursor:cursor + idx.shape[0]] = idx
            cursor += idx.shape[0]
            return
        sub = points[idx]
        extent = sub.max(axis=0) - sub.min(axis=0)
        axis = int(np.argmax(extent))
        rank = np.lexsort((idx, morton[idx], sub[:, axis]))
        half = idx.shape[0] // 2
        recurse(idx[rank[:half]])
        recurse(idx[rank[half:]])

    recurse(np.arange(n, dtype=np.int64))
    return order


@dataclass
class PersistenceMap:
    impulses: dict[ContactKey, float] = field(default_factory=dict)
    slots: dict[ContactKey, int] = field(default_factory=dict)
    new_keys: set = field(default_factory=set)
    vanished_keys: set = field(default_factory=set)
    persistent_fraction: float = 0.0
    reindexed: int = 0


@dataclass
class ContactHierarchy:
    capacity: int
    depth: int
    slot_of_key: dict[ContactKey, int]
    key_of_slot: list[ContactKey | None]
    slot_center: np.ndarray          # (capacity, 3); nan rows for virgin dummies
    slot_halfwidth: np.ndarray       # (capacity,)
    leaf_width: float
    large_start: int                 # slots >= large_start belong to the static-geometry subtree
    version: int

    @property
    def n_occupied(self) -> int:
        return len(self.slot_of_key)

    @property
    def dummy_slots(self) -> list[int]:
        return [s for s, k in enumerate(self.key_of_slot) if k is None]

    @property
    def row_modes(self) -> tuple[int, ...]:
        return (2,) * self.depth + (3,)

    def slots_for(self, active: ActiveSet) -> np.ndarray:
        return np.array([self.slot_of_key[c.key] for c in active.contacts],
                        dtype=np.int64)

    def copy(self) -> "ContactHierarchy":
        return ContactHierarchy(
            capacity=self.capacity, depth=self.depth,
            slot_of_key=dict(self.slot_of_key),
            key_of_slot=list(self.key_of_slot),
            slot_center=self.slot_center.copy(),
            slot_halfwidth=self.slot_halfwidth.copy(),
            leaf_width=self.leaf_width, large_start=self.large_start,
            version=self.version)


def build_hierarchy(active: ActiveSet, leaf_size: int = 1,
                    padding: str = "pow2") -> ContactHierarchy:
    """Fresh hierarchy: spatially ordered contacts plus dummy padding slots."""
    if len(active) < 1:
        raise ValueError("need at least one contact")
    if leaf_size != 1:
        raise ValueError("one contact per leaf slot is the supported granularity")
    contacts = active.contacts
    regular = [i for i, c in enumerate(contacts) if not c.large_geometry]
    large = [i for i, c in enumerate(contacts) if c.large_geometry]
    points = np.array([c.point for c in contacts])

    ordered_regular = [regular[j] for j in spatial_bisection_order(points[regular])] \
        if regular else []
    ordered_large = [large[j] for j in spatial_bisection_order(points[large])] \
        if large else []

    pad_large = next_power_of_two(len(ordered_large)) if ordered_large else 0
    capacity = max(2, next_power_of_two(len(ordered_regular) + pad_large))
    while capacity - pad_large < len(ordered_regular):
        capacity *= 2
    if padding == "headroom":
        capacity *= 2
    elif padding != "pow2":
        raise ValueError(f"unknown padding policy {padding!r}")
    large_start = capacity - pad_large

    slot_of_key: dict[ContactKey, int] = {}
    key_of_slot: list[ContactKey | None] = [None] * capacity
    centers = np.full((capacity, 3), np.nan)
    for s, i in enumerate(ordered_regular):
        slot_of_key[contacts[i].key] = s
        key_of_slot[s] = contacts[i].key
        centers[s] = contacts[i].point
    for j, i in enumerate(ordered_large):
        s = large_start + j
        slot_of_key[contacts[i].key] = s
        key_of_slot[s] = contacts[i].key
        centers[s] = contacts[i].point

    all_order = ordered_regular + ordered_large
    if len(all_order) > 1:
        seq = points[all_order]
        gaps = np.linalg.norm(np.diff(seq, axis=0), axis=1)
        positive = gaps[gaps > 0]
        leaf_width = float(np.median(positive)) if positive.size else 1.0
    else:
        leaf_width = 1.0
    halfwidth = np.full(capacity, 0.5 * leaf_width)

    return ContactHierarchy(
        capacity=capacity, depth=int(np.log2(capacity)),
        slot_of_key=slot_of_key, key_of_slot=key_of_slot,
        slot_center=centers, slot_halfwidth=halfwidth,
        leaf_width=leaf_width, large_start=large_start,
        version=next(_version_counter))


def carry_hierarchy(hierarchy: ContactHierarchy, previous: PersistenceMap | None,
                    active: ActiveSet,
                    ) -> tuple[ContactHierarchy | None, PersistenceMap]:
    """Update slot assignments for a new contact set, or signal a reset.

    Returns (updated hierarchy, persistence record); the hierarchy is None when
    the structure must be rebuilt (capacity exhausted or more than half of the
    persistent contacts drifted out of their slots).
    """
    contacts = active.contacts
    pmap = PersistenceMap()
    current_keys = {c.key for c in contacts}
    old_keys = set(hierarchy.slot_of_key.keys())
    pmap.vanished_keys = old_keys - current_keys
    if previous is not None:
        pmap.impulses = {k: v for k, v in previous.impulses.items() if k in current_keys}

    persistent, reindexed, fresh = [], [], []
    for c in contacts:
        slot = hierarchy.slot_of_key.get(c.key)
        if slot is None:
            fresh.append(c)
            pmap.new_keys.add(c.key)
            continue
        center = hierarchy.slot_center[slot]
        tol = hierarchy.slot_halfwidth[slot] + hierarchy.leaf_width
        if np.all(np.abs(c.point - center) <= tol):
            persistent.append((c, slot))
        else:
            reindexed.append(c)
    n_tracked = len(persistent) + len(reindexed)
    pmap.reindexed = len(reindexed)
    pmap.persistent_fraction = len(persistent) / max(1, len(contacts))
    if n_tracked > 0 and len(reindexed) > 0.5 * n_tracked:
        return None, pmap

    updated = hierarchy.copy()
    for key in pmap.vanished_keys:
        slot = updated.slot_of_key.pop(key)
        updated.key_of_slot[slot] = None
    for c in reindexed:
        slot = updated.slot_of_key.pop(c.key)
        updated.key_of_slot[slot] = None

    def place(batch: list, lo: int, hi: int) -> bool:
        free = [s for s in range(lo, hi) if updated.key_of_slot[s] is None]
        if len(batch) > len(free):
            return False
        free_pos = np.array([updated.slot_center[s] for s in free])
        taken = np.zeros(len(free), dtype=bool)
        for c in batch:
            dist = np.full(len(free), np.inf)
            for j, s in enumerate(free):
                if taken[j]:
                    continue
                if np.any(np.isnan(free_pos[j])):
                    dist[j] = 1e18 + s          # virgin slots last, in index order
                else:
                    dist[j] = float(np.linalg.norm(c.point - free_pos[j]))
            j = int(np.argmin(dist))
            taken[j] = True
            s = free[j]
            updated.slot_of_key[c.key] = s
            updated.key_of_slot[s] = c.key
            updated.slot_center[s] = c.point
            updated.slot_halfwidth[s] = 0.5 * updated.leaf_width
        return True

    arrivals = fresh + reindexed
    reg_batch = [c for c in arrivals if not c.large_geometry]
    large_batch = [c for c in arrivals if c.large_geometry]
    if not place(reg_batch, 0, updated.large_start):
        return None, pmap
    if not place(large_batch, updated.large_start, updated.capacity):
        return None, pmap
    return updated, pmap
