"""Rigid-body frictional contact simulation with a tensor-train accelerated
primal-dual interior-point contact solver."""

from .bodies import (RigidBody, WorldState, advance_positions,
                     apply_contact_impulses, external_impulse)
from .collision import ActiveSet, Contact, detect_contacts
from .assembly import CcpProblem, assemble_problem, build_contact_jacobian
from .engine import (SimulationState, Simulator, SolverConfig, StepReport,
                     simulate_step)
from .scenes import SceneConfig, generate_scene

__version__ = "0.1.0"

__all__ = [
    "RigidBody", "WorldState", "advance_positions", "apply_contact_impulses",
    "external_impulse", "ActiveSet", "Contact", "detect_contacts", "CcpProblem",
    "assemble_problem", "build_contact_jacobian", "SimulationState", "Simulator",
    "SolverConfig", "StepReport", "simulate_step", "SceneConfig", "generate_scene",
    "__version__",
]
