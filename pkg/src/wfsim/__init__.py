"""Simulation of Wigner's-friend protocols under collapse and relative-state
measurement semantics."""

from .qcore import LayoutError, LinearMap, StateVector
from .registers import Register, SpaceLayout, basis_state, extend, superpose
from .scenario import Scenario, Step, branches, build_fr, run
from .semantics import Measurement, ZeroProbabilityError

__version__ = "0.1.0"

__all__ = [
    "LayoutError", "LinearMap", "StateVector",
    "Register", "SpaceLayout", "basis_state", "extend", "superpose",
    "Scenario", "Step", "branches", "build_fr", "run",
    "Measurement", "ZeroProbabilityError",
]
