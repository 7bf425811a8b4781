"""Polarization adiabatons in a resonant Lambda medium: analytic solutions,
a coupled Maxwell-Bloch solver, and complex-time adiabaticity checks."""

from .adiabaton import AdiabatonSpec, build_fields, dark_state, phase_sum, profile
from .model import (
    AtomicState,
    EnvelopeSpec,
    FieldPair,
    LossParams,
    MediumParams,
    ShapeSpec,
    SimulationGrid,
    loss_rate,
)
from .solver import BoundaryCondition, RunRecord, run_simulation

__all__ = [
    "AdiabatonSpec",
    "AtomicState",
    "BoundaryCondition",
    "EnvelopeSpec",
    "FieldPair",
    "LossParams",
    "MediumParams",
    "RunRecord",
    "ShapeSpec",
    "SimulationGrid",
    "build_fields",
    "dark_state",
    "loss_rate",
    "phase_sum",
    "profile",
    "run_simulation",
]
__version__ = "0.1.0"
