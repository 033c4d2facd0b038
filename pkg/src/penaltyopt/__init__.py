"""Stochastic projection-penalty methods for optimization over intersections
of many simple sets."""
from . import _backend
from .sets import (
    Ball,
    Box,
    ConstraintSet,
    Halfspace,
    Hyperplane,
    LatticeHyperplane,
    RegularityInfo,
    count_projections,
    dist_sq,
    dykstra_project,
    gamma_estimate,
    gamma_linear,
    project,
    regularity,
)

__version__ = "0.1.0"


def backend() -> str:
    """Name of the active kernel backend (``"compiled"`` or ``"python"``)."""
    return _backend.name
