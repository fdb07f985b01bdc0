"""Semiclassical coupled-channel simulation of ion-atom collisions.

Modules
-------
potmodel
    Diabatic potential matrices V(R): loading, interpolation, analytic models.
trajectory
    Classical paths R(t), straight or curvilinear on an averaged potential.
propagators
    Integrators for i da/dt = V(R(t)) a.
scattering
    Single collisions, impact-parameter scans, cross sections.
sesmap
    Rescaled device-frame emulation of the collision Hamiltonian.
bench
    Timing and accuracy study of the integrators.
"""

__version__ = "0.1.0"

from .potmodel import AveragingScheme, DiabaticModel, build_analytic, load_model, potential_matrix
from .propagators import PropagatorConfig, propagate
from .scattering import cross_section, impact_scan, run_collision
from .trajectory import CollisionGeometry, make_path

__all__ = [
    "AveragingScheme",
    "CollisionGeometry",
    "DiabaticModel",
    "PropagatorConfig",
    "build_analytic",
    "cross_section",
    "impact_scan",
    "load_model",
    "make_path",
    "potential_matrix",
    "propagate",
    "run_collision",
]
