"""Rigid-body state, prescribed motion, and the semi-implicit velocity-impulse integrator.

Per body the state is (position x, unit quaternion Q, linear velocity u,
body-frame angular velocity omega). The generalized velocity vector stacks
6 entries per body as [u; omega]; positions use 7 coordinates per body.
Kinematic bodies carry zero inverse mass/inertia and follow their prescribed
trajectory exactly; their prescribed velocities act as the infinite-mass
momentum surrogate wherever M^{-1} k appears.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternions as quat


# ---------------------------------------------------------------------------
# Shapes

@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class Plane:
    """Half-space boundary; the local +z axis is the outward (material-free) normal."""


@dataclass(frozen=True)
class Box:
    """Oriented box with given half extents, centered at the body position."""
    half_extents: tuple[float, float, float]


Shape = Sphere | Plane | Box


# ---------------------------------------------------------------------------
# Prescribed motion for kinematic bodies (closed-form pose and velocity)

@dataclass(frozen=True)
class StaticMotion:
    def velocity(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), np.zeros(3)

    def pose(self, x0: np.ndarray, q0: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        return x0.copy(), q0.copy()


@dataclass(frozen=True)
class ConstantMotion:
    """Constant world-frame linear velocity and body-frame angular velocity."""
    linear: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def velocity(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.linear, dtype=float), np.asarray(self.angular, dtype=float)

    def pose(self, x0, q0, t):
        x = x0 + t * np.asarray(self.linear, dtype=float)
        q = quat.multiply(q0, quat.from_rotation_vector(t * np.asarray(self.angular, dtype=float)))
        return x, quat.normalize(q)


@dataclass(frozen=True)
class SinusoidMotion:
    """Velocity v(t) = amplitude * sin(2*pi*t/period + phase) along a fixed axis."""
    axis: tuple[float, float, float]
    amplitude: float
    period: float
    phase: float = 0.0

    def velocity(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        w = 2.0 * np.pi / self.period
        v = self.amplitude * np.sin(w * t + self.phase)
        return v * np.asarray(self.axis, dtype=float), np.zeros(3)

    def pose(self, x0, q0, t):
        w = 2.0 * np.pi / self.period
        s = (self.amplitude / w) * (np.cos(self.phase) - np.cos(w * t + self.phase))
        return x0 + s * np.asarray(self.axis, dtype=float), q0.copy()


Motion = StaticMotion | ConstantMotion | SinusoidMotion


# ---------------------------------------------------------------------------
# Bodies and world

@dataclass
class RigidBody:
    shape: Shape
    mass: float
    inertia_diag: np.ndarray          # body frame, zeros for kinematic
    position: np.ndarray
    orientation: np.ndarray           # unit quaternion (w, x, y, z)
    velocity: np.ndarray              # world frame
    angular_velocity: np.ndarray      # body frame
    motion: Motion | None = None      # set only on kinematic bodies
    density: float = 0.0              # bookkeeping for driven geometry

    inverse_mass: float = field(init=False)
    inverse_inertia_diag: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inertia_diag = np.asarray(self.inertia_diag, dtype=float)
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float)
        if self.motion is not None:
            self.inverse_mass = 0.0
            self.inverse_inertia_diag = np.zeros(3)
        else:
            if self.mass <= 0.0:
                raise ValueError("dynamic body needs positive mass")
            self.inverse_mass = 1.0 / self.mass
            self.inverse_inertia_diag = 1.0 / self.inertia_diag

    @property
    def kinematic(self) -> bool:
        return self.motion is not None


def sphere_body(radius: float, mass: float, position, velocity=(0.0, 0.0, 0.0)) -> RigidBody:
    inertia = (2.0 / 5.0) * mass * radius**2 * np.ones(3)
    return RigidBody(
        shape=Sphere(radius), mass=mass, inertia_diag=inertia,
        position=np.asarray(position, dtype=float), orientation=quat.IDENTITY.copy(),
        velocity=np.asarray(velocity, dtype=float), angular_velocity=np.zeros(3),
    )


def kinematic_body(shape: Shape, position, orientation=None, motion: Motion | None = None,
                   density: float = 0.0) -> RigidBody:
    return RigidBody(
        shape=shape, mass=0.0, inertia_diag=np.zeros(3),
        position=np.asarray(position, dtype=float),
        orientation=quat.IDENTITY.copy() if orientation is None else np.asarray(orientation, dtype=float),
        velocity=np.zeros(3), angular_velocity=np.zeros(3),
        motion=motion if motion is not None else StaticMotion(),
        density=density,
    )


@dataclass
class WorldState:
    bodies: list[RigidBody]
    gravity: np.ndarray
    time: float = 0.0
    step_index: int = 0
    exact_quaternion_update: bool = False

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        # anchor pose of kinematic bodies at t=0 for closed-form trajectories
        self._anchors = {
            i: (b.position.copy(), b.orientation.copy())
            for i, b in enumerate(self.bodies) if b.kinematic
        }
        for i in self._anchors:
            b = self.bodies[i]
            b.velocity, b.angular_velocity = b.motion.velocity(self.time)

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)

    def generalized_velocity(self) -> np.ndarray:
        v = np.empty(6 * self.n_bodies)
        for i, b in enumerate(self.bodies):
            v[6 * i:6 * i + 3] = b.velocity
            v[6 * i + 3:6 * i + 6] = b.angular_velocity
        return v

    def kinematic_velocity(self, t: float) -> np.ndarray:
        """6M vector holding prescribed velocities at time t on kinematic entries, zeros elsewhere."""
        v = np.zeros(6 * self.n_bodies)
        for i in self._anchors:
            lin, ang = self.bodies[i].motion.velocity(t)
            v[6 * i:6 * i + 3] = lin
            v[6 * i + 3:6 * i + 6] = ang
        return v

    def mass_operator(self) -> "MassOperator":
        return MassOperator.from_world(self)


class MassOperator:
    """Block-diagonal 6x6 mass matrix and its inverse; exactly zero inverse blocks on kinematic bodies."""

    def __init__(self, inv_diag6: np.ndarray, diag6: np.ndarray, kinematic_mask6: np.ndarray):
        self.inv_diag6 = inv_diag6
        self.diag6 = diag6
        self.kinematic_mask6 = kinematic_mask6

    @classmethod
    def from_world(cls, world: WorldState) -> "MassOperator":
        n = world.n_bodies
        inv = np.empty(6 * n)
        diag = np.empty(6 * n)
        kin = np.zeros(6 * n, dtype=bool)
        for i, b in enumerate(world.bodies):
            inv[6 * i:6 * i + 3] = b.inverse_mass
            inv[6 * i + 3:6 * i + 6] = b.inverse_inertia_diag
            diag[6 * i:6 * i + 3] = b.mass
            diag[6 * i + 3:6 * i + 6] = b.inertia_diag
            if b.kinematic:
                kin[6 * i:6 * i + 6] = True
        return cls(inv, diag, kin)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.diag6 * v

    def apply_inverse(self, p: np.ndarray) -> np.ndarray:
        return self.inv_diag6 * p

    def free_velocity(self, k: np.ndarray) -> np.ndarray:
        """M^{-1} k with kinematic entries passed through (infinite-mass limit of M^{-1} M v)."""
        v = self.inv_diag6 * k
        v[self.kinematic_mask6] = k[self.kinematic_mask6]
        return v


# ---------------------------------------------------------------------------
# Integrator operations

def external_impulse(world: WorldState, dt: float) -> np.ndarray:
    """Momentum-plus-impulse vector k = M v + dt * f, with gravity and gyroscopic torque.

    Kinematic entries carry the prescribed velocity at t+dt as their momentum
    surrogate, so that MassOperator.free_velocity(k) is the contact-free velocity.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    k = np.empty(6 * world.n_bodies)
    for i, b in enumerate(world.bodies):
        s = 6 * i
        if b.kinematic:
            lin, ang = b.motion.velocity(world.time + dt)
            k[s:s + 3] = lin
            k[s + 3:s + 6] = ang
        else:
            k[s:s + 3] = b.mass * b.velocity + dt * b.mass * world.gravity
            iw = b.inertia_diag * b.angular_velocity
            k[s + 3:s + 6] = iw - dt * np.cross(b.angular_velocity, iw)
    return k


def apply_contact_impulses(world: WorldState, jacobian, gamma: np.ndarray, k: np.ndarray) -> np.ndarray:
    """New generalized velocity v = M^{-1}(k + D gamma); prescribed values on kinematic bodies."""
    if not np.all(np.isfinite(gamma)):
        raise ValueError("non-finite contact impulses")
    p = k if jacobian is None or gamma.size == 0 else k + jacobian.apply(gamma)
    if p.shape != k.shape:
        raise ValueError("impulse dimension mismatch")
    mass = world.mass_operator()
    v = mass.apply_inverse(p)
    # contact impulses never move kinematic bodies; keep the prescribed surrogate
    v[mass.kinematic_mask6] = k[mass.kinematic_mask6]
    return v


def advance_positions(world: WorldState, v_next: np.ndarray, dt: float) -> WorldState:
    """Advance q by dt*L(q)v and the clock by dt; quaternions renormalized each step."""
    t_next = world.time + dt
    for i, b in enumerate(world.bodies):
        s = 6 * i
        if b.kinematic:
            x0, q0 = world._anchors[i]
            b.position, b.orientation = b.motion.pose(x0, q0, t_next)
            b.velocity, b.angular_velocity = b.motion.velocity(t_next)
        else:
            b.velocity = v_next[s:s + 3].copy()
            b.angular_velocity = v_next[s + 3:s + 6].copy()
            b.position = b.position + dt * b.velocity
            b.orientation = quat.integrate(b.orientation, b.angular_velocity, dt,
                                           exact=world.exact_quaternion_update)
    world.time = t_next
    world.step_index += 1
    return world
