"""Semiclassical Monte-Carlo simulation of a single two-level atom trapped in a
standing-wave dipole trap and cooled inside a pumped high-finesse cavity."""

__version__ = "0.1.0"

from .model import Geometry, SystemParams, sample_fields, trap_frequencies  # noqa: E402
from .forces import evaluate_forces, friction_spectrum, diffusion_channels  # noqa: E402
from .dynamics import (AtomState, Launch, ScheduleSpec, ThermalWell,  # noqa: E402
                       TrajectorySpec, run_ensemble, run_trajectory, step)

__all__ = [
    "Geometry", "SystemParams", "sample_fields", "trap_frequencies", "evaluate_forces",
    "friction_spectrum", "diffusion_channels", "AtomState", "Launch", "ScheduleSpec",
    "ThermalWell", "TrajectorySpec", "run_ensemble", "run_trajectory", "step",
]
