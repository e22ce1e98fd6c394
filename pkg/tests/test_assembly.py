import numpy as np

from ttdem.assembly import (assemble_N, assemble_problem, assemble_r,
                            build_contact_jacobian, ccp_residual, project_cone,
                            project_cones, write_coordinate_text)
from ttdem.bodies import (ConstantMotion, Plane, WorldState, external_impulse,
                          kinematic_body, sphere_body)
from ttdem.collision import detect_contacts

from conftest import random_cluster_world, sphere_on_plane_world, three_spheres_on_plane_world


def build_problem(world, delta=0.01, dt=0.025, mu=0.25, k=None):
    active = detect_contacts(world, delta)
    jac = build_contact_jacobian(world, active)
    if k is None:
        k = external_impulse(world, dt)
    return assemble_problem(world, active, jac, k, dt, mu), jac, active


def test_normal_column_on_sphere_through_center():
    world = sphere_on_plane_world()
    active = detect_contacts(world, 0.01)
    jac = build_contact_jacobian(world, active)
    dense = jac.dense()
    np.testing.assert_allclose(dense[6:12, 0], [0, 0, 1, 0, 0, 0], atol=1e-14)


def test_tangential_torque_arm_is_radius():
    world = sphere_on_plane_world(radius=0.1)
    active = detect_contacts(world, 0.01)
    jac = build_contact_jacobian(world, active)
    for col in (1, 2):
        torque = jac.dense()[9:12, col]
        assert abs(np.linalg.norm(torque) - 0.1) < 1e-14


def test_rigid_translation_gives_zero_relative_velocity():
    world = WorldState(
        [sphere_body(0.1, 1.0, (0, 0, 0)), sphere_body(0.1, 2.0, (0.2, 0, 0))],
        gravity=(0, 0, 0.0))
    active = detect_contacts(world, 0.01)
    jac = build_contact_jacobian(world, active)
    v = np.zeros(12)
    v[0:3] = v[6:9] = [0.3, -1.1, 0.7]
    np.testing.assert_allclose(jac.apply_transpose(v), 0.0, atol=1e-14)


def test_single_contact_N_from_dense_oracle():
    m = 1.0
    world = sphere_on_plane_world(mass=m)
    problem, jac, _ = build_problem(world)
    n_dense = problem.N.dense()
    assert n_dense.shape == (3, 3)
    assert abs(n_dense[0, 0] - 1.0 / m) < 1e-14
    # tangential diagonal: 1/m + R^2 / I with I = (2/5) m R^2
    assert abs(n_dense[1, 1] - 3.5 / m) < 1e-12
    w = np.linalg.eigvalsh(n_dense)
    assert np.all(w > 0)


def test_disjoint_contacts_have_no_coupling_block():
    bodies = [sphere_body(0.1, 1.0, (0, 0, 0)), sphere_body(0.1, 1.0, (0.2, 0, 0)),
              sphere_body(0.1, 1.0, (10, 0, 0)), sphere_body(0.1, 1.0, (10.2, 0, 0))]
    world = WorldState(bodies, gravity=(0, 0, 0.0))
    problem, _, active = build_problem(world)
    assert len(active) == 2
    assert problem.N.block(0, 1) is None
    assert problem.N.block(1, 0) is None


def test_three_sphere_scene_block_pattern_matches_shared_dynamic_bodies():
    world = three_spheres_on_plane_world()
    problem, _, active = build_problem(world)
    assert len(active) == 5
    offdiag = {(i, j) for (i, j) in problem.N.block_pattern()
               if i < j and np.abs(problem.N.block(i, j)).max() > 1e-15}
    # contacts sorted by key: (0,1),(0,2),(0,3),(1,2),(2,3); plane (body 0) is kinematic
    # and cannot couple contacts, so adjacency runs through shared spheres only
    assert offdiag == {(0, 3), (1, 3), (1, 4), (2, 4), (3, 4)}
    # nonzero block always implies a shared body
    pairs = [(c.body_a, c.body_b) for c in active.contacts]
    for (i, j) in offdiag:
        assert set(pairs[i]) & set(pairs[j])


def test_assembled_N_matches_dense_jacobian_product(rng):
    world = random_cluster_world(rng, 64)
    problem, jac, active = build_problem(world)
    assert len(active) >= 20
    minv = np.diag(world.mass_operator().inv_diag6)
    dense = jac.dense().T @ minv @ jac.dense()
    np.testing.assert_allclose(problem.N.dense(), dense, atol=1e-13)


def test_N_positive_semidefinite_random_probes(rng):
    world = random_cluster_world(rng, 40)
    problem, _, _ = build_problem(world)
    n = problem.N.shape[0]
    for _ in range(1000):
        x = rng.normal(size=n)
        assert x @ problem.N.matvec(x) >= -1e-12 * (x @ x)


def test_assemble_r_resting_sphere():
    world = sphere_on_plane_world(mass=1.0)
    problem, _, _ = build_problem(world, dt=0.025)
    np.testing.assert_allclose(problem.r, [-0.25, 0, 0], atol=1e-13)


def test_assemble_r_gap_term_only():
    world = sphere_on_plane_world(gap=0.05)
    active = detect_contacts(world, 0.06)
    jac = build_contact_jacobian(world, active)
    mass = world.mass_operator()
    r = assemble_r(jac, mass, np.zeros(12), np.array([0.05]), 0.025)
    np.testing.assert_allclose(r, [2.0, 0, 0], atol=1e-14)


def test_assemble_r_moving_kinematic_floor_tangential_terms():
    # sliding floor drags tangential components of r through the infinite-mass limit
    vb = 0.8
    floor = kinematic_body(Plane(), position=(0, 0, 0), motion=ConstantMotion(linear=(vb, 0, 0)))
    world = WorldState([floor, sphere_body(0.1, 1.0, (0, 0, 0.1))], gravity=(0, 0, 0.0))
    problem, jac, active = build_problem(world, dt=0.025)
    c = active.contacts[0]
    # dense evaluation oracle: r = b + D^T u with u holding the prescribed velocity
    u = np.zeros(12)
    u[0:3] = [vb, 0, 0]
    np.testing.assert_allclose(problem.r, jac.dense().T @ u, atol=1e-14)
    np.testing.assert_allclose(problem.r, [0.0, c.t1 @ [vb, 0, 0], c.t2 @ [vb, 0, 0]],
                               atol=1e-14)
    assert np.linalg.norm(problem.r[1:]) > 0.1


def test_project_cone_cases():
    np.testing.assert_allclose(project_cone(np.array([1.0, 0.1, 0.0]), 0.25),
                               [1.0, 0.1, 0.0], atol=1e-15)
    np.testing.assert_allclose(project_cone(np.array([-1.0, 0.0, 0.0]), 0.25),
                               [0.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(project_cone(np.array([0.0, 1.0, 0.0]), 1.0),
                               [0.5, 0.5, 0.0], atol=1e-15)


def test_project_cone_matches_variational_inequality(rng):
    # p = Pi(g) must satisfy (g - p) . (y - p) <= 0 for every feasible y
    for _ in range(200):
        mu = rng.uniform(0.05, 1.5)
        g = rng.normal(size=3) * 2.0
        p = project_cone(g, mu)
        gn = p[0]
        assert np.linalg.norm(p[1:]) <= mu * gn + 1e-12
        for _ in range(25):
            yn = rng.uniform(0.0, 3.0)
            ang = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0.0, 1.0) * mu * yn
            y = np.array([yn, rad * np.cos(ang), rad * np.sin(ang)])
            assert (g - p) @ (y - p) <= 1e-10


def test_projection_idempotent_and_nonexpansive(rng):
    mu = np.full(50, 0.4)
    x = rng.normal(size=150)
    y = rng.normal(size=150)
    px = project_cones(x, mu)
    py = project_cones(y, mu)
    np.testing.assert_allclose(project_cones(px, mu), px, atol=1e-14)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def test_ccp_residual_zero_at_analytic_solution():
    world = sphere_on_plane_world(mass=1.0)
    problem, _, _ = build_problem(world, dt=0.025)
    gamma = np.array([0.25, 0.0, 0.0])
    assert ccp_residual(gamma, problem) <= 1e-10


def test_ccp_residual_positive_when_pushing_needed():
    world = sphere_on_plane_world(mass=1.0)
    problem, _, _ = build_problem(world, dt=0.025)
    assert problem.r[0] < 0
    assert ccp_residual(np.zeros(3), problem) > 1e-3


def test_coordinate_dump_sorted(tmp_path, rng):
    world = random_cluster_world(rng, 20)
    problem, _, _ = build_problem(world)
    path = tmp_path / "n.txt"
    write_coordinate_text(problem.N, path)
    rows = [line.split() for line in path.read_text().splitlines()]
    coords = [(int(r), int(c)) for r, c, _ in rows]
    assert coords == sorted(coords)
    dense = problem.N.dense()
    for r, c, v in rows:
        assert abs(dense[int(r), int(c)] - float(v)) < 1e-15
