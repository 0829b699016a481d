"""Split-step solver for a free fluid coupled to a poroelastic disk through a
thin viscoelastic plate, with exact discrete energy ledgers."""

from __future__ import annotations

from .biot_fluid import Discretization, FullState, PhysicalParams, StepError
from .driver import COMPLETE, PARTIAL, InitialData, InitialDataError, RunConfig, Trajectory, initialize, kinematic_drift, reconstruct, run

__all__ = [
    "COMPLETE",
    "PARTIAL",
    "Discretization",
    "FullState",
    "InitialData",
    "InitialDataError",
    "PhysicalParams",
    "RunConfig",
    "StepError",
    "Trajectory",
    "initialize",
    "kinematic_drift",
    "reconstruct",
    "run",
]

__version__ = "0.1.0"
