"""Explicit material point method on quadratic B-spline grids."""

from .constitutive import (ConstitutiveModel, clamp_deformation, dpsi_dF,
                           energy_density, make_preset, preset_names,
                           return_map, stress_kirchhoff, yield_value)
from .solver import (Collider, ExternalLoad, MpmGrid, MpmSolver, MpmState,
                     Region, collide_velocity)
from .transfers import weight_stencil

__all__ = [
    "ConstitutiveModel",
    "clamp_deformation",
    "dpsi_dF",
    "energy_density",
    "make_preset",
    "preset_names",
    "return_map",
    "stress_kirchhoff",
    "yield_value",
    "Collider",
    "ExternalLoad",
    "MpmGrid",
    "MpmSolver",
    "MpmState",
    "Region",
    "collide_velocity",
    "weight_stencil",
]
