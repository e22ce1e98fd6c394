import numpy as np

from ttdem.bodies import WorldState, sphere_body
from ttdem.collision import (brute_force_pairs, contact_frame, detect_contacts,
                             gap_sphere_plane)

from conftest import random_cluster_world, sphere_on_plane_world, three_spheres_on_plane_world


def two_sphere_world(distance):
    return WorldState(
        [sphere_body(0.1, 1.0, (0, 0, 0)), sphere_body(0.1, 1.0, (distance, 0, 0))],
        gravity=(0, 0, -10.0))


def test_separated_spheres_not_detected():
    active = detect_contacts(two_sphere_world(0.25), 0.01)
    assert len(active) == 0


def test_near_spheres_detected_with_gap():
    active = detect_contacts(two_sphere_world(0.205), 0.01)
    assert len(active) == 1
    assert abs(active.contacts[0].gap - 0.005) < 1e-14


def test_three_sphere_scene_contact_census_and_adjacency():
    world = three_spheres_on_plane_world()
    active = detect_contacts(world, 0.01)
    pairs = sorted((c.body_a, c.body_b) for c in active.contacts)
    # plane is body 0, spheres 1..3 in a row
    assert pairs == [(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]
    # edge-adjacency graph of the contact network: contacts sharing any body
    idx = {p: i for i, p in enumerate(pairs)}
    edges = set()
    for pa in pairs:
        for pb in pairs:
            if pa < pb and set(pa) & set(pb):
                edges.add((idx[pa], idx[pb]))
    expected = {(0, 1), (0, 2), (1, 2),            # through the plane
                (0, 3), (1, 3), (1, 4), (2, 4),    # through each sphere
                (3, 4)}
    assert edges == expected


def test_gap_sphere_plane_cases():
    p0 = np.zeros(3)
    n = np.array([0.0, 0.0, 1.0])
    assert gap_sphere_plane(np.array([0, 0, 0.10]), 0.1, p0, n) == 0.0
    assert abs(gap_sphere_plane(np.array([0, 0, 0.15]), 0.1, p0, n) - 0.05) < 1e-15
    assert abs(gap_sphere_plane(np.array([0, 0, 0.08]), 0.1, p0, n) + 0.02) < 1e-15


def test_contact_frame_axis_aligned():
    t1, t2 = contact_frame(np.array([0.0, 0.0, 1.0]))
    assert abs(np.dot(t1, t2)) < 1e-15
    np.testing.assert_allclose(np.cross(np.array([0.0, 0.0, 1.0]), t1), t2, atol=1e-15)
    t1, t2 = contact_frame(np.array([1.0, 0.0, 0.0]))
    assert abs(t1 @ np.array([1.0, 0, 0])) < 1e-15
    assert abs(t2 @ np.array([1.0, 0, 0])) < 1e-15


def test_contact_frame_orthonormal_property(rng):
    # 10^4 random unit normals
    v = rng.normal(size=(10_000, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    for n in v:
        t1, t2 = contact_frame(n)
        assert abs(np.linalg.norm(t1) - 1) < 1e-12
        assert abs(np.linalg.norm(t2) - 1) < 1e-12
        assert abs(n @ t1) < 1e-12
        assert abs(n @ t2) < 1e-12
        assert abs(t1 @ t2) < 1e-12


def test_detection_is_deterministic(rng):
    world = random_cluster_world(rng, 60)
    a = detect_contacts(world, 0.01)
    b = detect_contacts(world, 0.01)
    assert a.keys == b.keys
    for ca, cb in zip(a.contacts, b.contacts):
        np.testing.assert_array_equal(ca.point, cb.point)
        np.testing.assert_array_equal(ca.normal, cb.normal)
        assert ca.gap == cb.gap


def test_all_gaps_below_threshold(rng):
    world = random_cluster_world(rng, 80)
    delta = 0.013
    active = detect_contacts(world, delta)
    assert len(active) > 0
    assert all(c.gap <= delta for c in active.contacts)


def test_frames_orthonormal_on_detected_contacts(rng):
    world = random_cluster_world(rng, 50)
    for c in detect_contacts(world, 0.01).contacts:
        m = np.column_stack([c.normal, c.t1, c.t2])
        np.testing.assert_allclose(m.T @ m, np.eye(3), atol=1e-12)


def test_broadphase_superset_of_narrowphase_brute_force(rng):
    # grid broadphase must reproduce every brute-force sphere pair on a 500-body scene
    world = random_cluster_world(rng, 500)
    delta = 0.02
    expected = brute_force_pairs(world, delta)
    active = detect_contacts(world, delta)
    got = {(c.body_a, c.body_b) for c in active.contacts
           if c.key[0] != 0 and c.key[1] != 0}
    assert got == {p for p in expected}


def test_sphere_plane_normal_points_at_sphere():
    world = sphere_on_plane_world()
    active = detect_contacts(world, 0.01)
    assert len(active) == 1
    c = active.contacts[0]
    # plane is body 0 = body_a, so the stored normal points from the sphere toward the plane
    np.testing.assert_allclose(c.normal, [0, 0, -1.0], atol=1e-15)
    assert abs(c.gap) < 1e-15
