"""Shared scene builders and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from ttdem.bodies import (ConstantMotion, Plane, Sphere, StaticMotion, WorldState,
                          kinematic_body, sphere_body)


def ground_plane():
    return kinematic_body(Plane(), position=(0.0, 0.0, 0.0))


def sphere_on_plane_world(mass=1.0, radius=0.1, gravity=(0.0, 0.0, -10.0), gap=0.0):
    """Single sphere resting on the ground plane (plane is body 0)."""
    world = WorldState(
        bodies=[ground_plane(),
                sphere_body(radius, mass, (0.0, 0.0, radius + gap))],
        gravity=np.asarray(gravity),
    )
    return world


def three_spheres_on_plane_world(radius=0.1, mass=1.0):
    """Three touching spheres in a row resting on the ground plane.

    Contact census: 3 sphere-plane, 2 sphere-sphere.
    """
    bodies = [ground_plane()]
    for i in range(3):
        bodies.append(sphere_body(radius, mass, (2.0 * radius * i, 0.0, radius)))
    return WorldState(bodies=bodies, gravity=np.array([0.0, 0.0, -10.0]))


def random_cluster_world(rng, n_spheres, radius=0.1, mass=1.0, speed=1.0):
    """Jittered cubic cluster resting on the ground; random velocities create impacts."""
    side = max(2, int(np.ceil(n_spheres ** (1.0 / 3.0))))
    bodies = [ground_plane()]
    count = 0
    for ix in range(side):
        for iy in range(side):
            for iz in range(side):
                if count >= n_spheres:
                    break
                pos = (2.0 * radius * np.array([ix, iy, iz], dtype=float)
                       + np.array([0.0, 0.0, radius])
                       + 0.02 * radius * rng.uniform(-1.0, 1.0, size=3))
                vel = speed * rng.uniform(-1.0, 1.0, size=3)
                vel[2] = -abs(vel[2])
                bodies.append(sphere_body(radius, mass, pos, vel))
                count += 1
    return WorldState(bodies=bodies, gravity=np.array([0.0, 0.0, -10.0]))


def packed_lattice_world(n_side, radius=0.1, mass=1.0, spacing_factor=1.0):
    """Cubic lattice of touching spheres resting on the ground plane."""
    bodies = [ground_plane()]
    s = 2.0 * radius * spacing_factor
    for ix in range(n_side):
        for iy in range(n_side):
            for iz in range(n_side):
                bodies.append(sphere_body(
                    radius, mass, (s * ix, s * iy, radius + s * iz)))
    return WorldState(bodies=bodies, gravity=np.array([0.0, 0.0, -10.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
