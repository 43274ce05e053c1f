"""Isogeometric magnetostatic solver with a POD-based neural surrogate."""

from .machine import MachineConfig, ParamVector, build_machine_geometry, machine_materials

__all__ = [
    "MachineConfig",
    "ParamVector",
    "build_machine_geometry",
    "machine_materials",
]

__version__ = "0.1.0"
