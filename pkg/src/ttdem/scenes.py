"""Scene generation for the benchmark experiments and their configuration.

Scene kinds:
  sedimentation-mixer  (2n+1)^3 spheres in a box with a rotating paddle
  blade-draft          (2n+1)^3 spheres, a blade sweeping along x
  shear-box            (3n+1)(2n+1)^2 spheres, driven lower frame plus press

All geometry is deterministic given the configuration; the only random draw is
the lattice jitter, fed from the seed. Kinematic bodies come first in the body
list, spheres after, so sphere indices are stable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import quaternions as quat
from .bodies import (Box, ConstantMotion, Plane, SinusoidMotion, StaticMotion,
                     WorldState, kinematic_body, sphere_body)


@dataclass
class SceneConfig:
    scene: str = "sedimentation-mixer"
    n: int = 1                      # lattice parameter
    radius: float = 0.1             # m
    density: float = 2500.0         # kg/m^3
    mu: float = 0.25
    jitter: float = 0.1             # lattice jitter, fraction of radius
    lattice_gap: float = 0.05      # spacing = 2 r (1 + lattice_gap)
    drop_height: float = 0.2        # m above the packing (ignored when prepacked)
    prepacked: bool = False         # start settled at the bottom of the box
    closed_box: bool = False        # add a ceiling (closed momentum bookkeeping)
    dt: float = 0.025               # s
    steps: int = 100
    gravity_z: float = -9.81
    solver: str = "pdip"            # pdip | pgs | jacobi | apgd
    precond: str = "ilu0"           # dense | none | ilu0 | tt
    tt_eps: float = 1e-2
    tt_rank_cap: int = 10
    krylov_tol: float = 1e-6
    krylov_max_iter: int = 1000
    pdip_tol: float = 1e-4
    pdip_max_newton: int = 300
    first_order_tol: float = 1e-6
    first_order_max_iter: int = 20000
    contact_margin_factor: float = 0.1   # activation distance, fraction of radius
    mixer_omega: float = 0.5        # rad/s about z
    blade_speed: float = 0.5        # m/s velocity amplitude
    drive_period: float = 4.0       # s, sinusoidal drives
    press_speed: float = 0.005      # m/s downward
    shear_speed: float = 0.2        # m/s amplitude of the lower frame
    wall_clearance: float = 0.05    # fraction of radius
    snapshot_every: int = 0         # steps between snapshots, 0 = off
    timings: bool = True            # False zeroes wall-clock metric columns
    seed: int = 0

    def __post_init__(self):
        if self.scene not in ("sedimentation-mixer", "blade-draft", "shear-box"):
            raise ValueError(f"unknown scene kind {self.scene!r}")
        for name in ("n", "radius", "density", "dt", "drive_period"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

    def sphere_count(self) -> int:
        if self.scene == "shear-box":
            return (3 * self.n + 1) * (2 * self.n + 1) ** 2
        return (2 * self.n + 1) ** 3

    def lattice_dims(self) -> tuple[int, int, int]:
        if self.scene == "shear-box":
            return (2 * self.n + 1, 2 * self.n + 1, 3 * self.n + 1)
        side = 2 * self.n + 1
        return (side, side, side)


def parse_config_file(path) -> SceneConfig:
    """Flat key = value text file; '#' starts a comment; keys typed by SceneConfig."""
    fields = {f.name: f for f in dataclasses.fields(SceneConfig)}
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            ftype = fields[key].type
            if ftype in ("bool", bool):
                if val.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(f"{path}:{lineno}: bad bool {val!r}")
                values[key] = val.lower() in ("true", "1")
            elif ftype in ("int", int):
                values[key] = int(val)
            elif ftype in ("float", float):
                values[key] = float(val)
            else:
                values[key] = val
    return SceneConfig(**values)


def _sphere_mass(config: SceneConfig) -> float:
    return config.density * (4.0 / 3.0) * np.pi * config.radius**3


def _wall(position, normal) -> "kinematic_body":
    """Static plane whose +z axis is rotated onto the requested normal."""
    n = np.asarray(normal, dtype=float)
    n /= np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, n)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        q = quat.IDENTITY.copy() if n[2] > 0 else quat.from_rotation_vector(
            np.pi * np.array([1.0, 0.0, 0.0]))
    else:
        angle = float(np.arctan2(s, np.dot(z, n)))
        q = quat.from_rotation_vector(angle * axis / s)
    return kinematic_body(Plane(), position=position, orientation=q)


def _lattice_positions(config: SceneConfig, rng) -> tuple[np.ndarray, float]:
    nx, ny, nz = config.lattice_dims()
    spacing = 2.0 * config.radius * (1.0 + config.lattice_gap)
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    pos = np.column_stack([
        (ix.ravel() - (nx - 1) / 2.0) * spacing,
        (iy.ravel() - (ny - 1) / 2.0) * spacing,
        iz.ravel() * spacing + config.radius,
    ])
    amplitude = config.jitter * config.radius
    if amplitude > 0:
        pos += rng.uniform(-amplitude, amplitude, size=pos.shape)
    if not config.prepacked:
        pos[:, 2] += config.drop_height
    return pos, spacing


def generate_scene(config: SceneConfig) -> WorldState:
    rng = np.random.default_rng(config.seed)
    positions, spacing = _lattice_positions(config, rng)
    nx, ny, nz = config.lattice_dims()
    half_x = 0.5 * nx * spacing + config.wall_clearance * config.radius
    half_y = 0.5 * ny * spacing + config.wall_clearance * config.radius
    bed_top = nz * spacing + config.radius
    box_height = bed_top + max(config.drop_height, 0.0) + 4.0 * config.radius
    if np.max(np.abs(positions[:, 0])) > half_x or np.max(np.abs(positions[:, 1])) > half_y:
        raise ValueError("lattice exceeds container")

    kin: list = []
    if config.scene == "shear-box":
        # driven lower half: floor slab and four wall slabs moving along x
        drive = SinusoidMotion(axis=(1.0, 0.0, 0.0), amplitude=config.shear_speed,
                               period=config.drive_period)
        thick = 2.0 * config.radius
        h_half = 0.5 * box_height
        kin.append(kinematic_body(Box((half_x + thick, half_y + thick, thick)),
                                  position=(0, 0, -thick), motion=drive))
        for sx in (-1, 1):
            kin.append(kinematic_body(
                Box((thick * 0.5, half_y + thick, h_half * 0.5)),
                position=(sx * (half_x + 0.5 * thick), 0.0, 0.5 * h_half),
                motion=drive))
            kin.append(kinematic_body(
                Box((thick * 0.5, half_y + thick, h_half * 0.5)),
                position=(sx * (half_x + 0.5 * thick), 0.0, 1.5 * h_half)))
        for sy in (-1, 1):
            kin.append(kinematic_body(
                Box((half_x + thick, thick * 0.5, h_half * 0.5)),
                position=(0.0, sy * (half_y + 0.5 * thick), 0.5 * h_half),
                motion=drive))
            kin.append(kinematic_body(
                Box((half_x + thick, thick * 0.5, h_half * 0.5)),
                position=(0.0, sy * (half_y + 0.5 * thick), 1.5 * h_half)))
        press = kinematic_body(
            Box((half_x * 0.95, half_y * 0.95, config.radius)),
            position=(0.0, 0.0, bed_top + config.radius + 0.2 * config.radius),
            motion=ConstantMotion(linear=(0.0, 0.0, -config.press_speed)),
            density=10.0 * config.density)
        press.mass = press.density * 8.0 * (half_x * 0.95) * (half_y * 0.95) * config.radius
        kin.append(press)
    else:
        kin.append(_wall((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)))        # floor
        kin.append(_wall((half_x, 0.0, 0.0), (-1.0, 0.0, 0.0)))
        kin.append(_wall((-half_x, 0.0, 0.0), (1.0, 0.0, 0.0)))
        kin.append(_wall((0.0, half_y, 0.0), (0.0, -1.0, 0.0)))
        kin.append(_wall((0.0, -half_y, 0.0), (0.0, 1.0, 0.0)))
        if config.closed_box:
            kin.append(_wall((0.0, 0.0, box_height), (0.0, 0.0, -1.0)))
        if config.scene == "sedimentation-mixer":
            paddle_half = (0.8 * half_x, 0.4 * config.radius, 1.5 * config.radius)
            z_paddle = bed_top + 2.0 * config.radius if config.prepacked \
                else 0.45 * bed_top
            kin.append(kinematic_body(
                Box(paddle_half), position=(0.0, 0.0, z_paddle),
                motion=ConstantMotion(angular=(0.0, 0.0, config.mixer_omega))))
        elif config.scene == "blade-draft":
            blade_half = (0.05, 0.9 * half_y, 0.6 * bed_top)
            kin.append(kinematic_body(
                Box(blade_half),
                position=(-half_x + 3.0 * config.radius, 0.0, blade_half[2]),
                motion=SinusoidMotion(axis=(1.0, 0.0, 0.0),
                                      amplitude=config.blade_speed,
                                      period=config.drive_period)))

    mass = _sphere_mass(config)
    bodies = list(kin)
    for p in positions:
        bodies.append(sphere_body(config.radius, mass, p))
    return WorldState(bodies=bodies, gravity=np.array([0.0, 0.0, config.gravity_z]))


def solver_config_from_scene(config: SceneConfig):
    from .engine import SolverConfig
    from .pdip import PdipOptions
    return SolverConfig(
        solver=config.solver,
        linear_solver=config.precond,
        dt=config.dt,
        mu=config.mu,
        contact_margin=config.contact_margin_factor * config.radius,
        pdip=PdipOptions(tol_gap=config.pdip_tol, tol_feas=config.pdip_tol,
                         max_newton=config.pdip_max_newton),
        first_order_tol=config.first_order_tol,
        first_order_max_iter=config.first_order_max_iter,
        krylov_tol=config.krylov_tol,
        krylov_max_iter=config.krylov_max_iter,
        tt_eps=config.tt_eps,
        tt_rank_cap=config.tt_rank_cap,
        seed=config.seed,
        collect_wall_times=config.timings,
    )
