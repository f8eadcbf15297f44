"""Numerical laboratory for measure-valued stochastic calculus.

Finite atomic measures, linear functional derivatives of cylinder functionals,
branching particle approximations of controlled super-diffusions, and
Monte-Carlo checks of the Ito formula and HJB/verification conditions.
"""

from mvcalc.errors import CapabilityError, InputError, ResourceError
from mvcalc.measure import CutoffProfile, FiniteMeasure, TestFamily

__all__ = [
    "CapabilityError",
    "CutoffProfile",
    "FiniteMeasure",
    "InputError",
    "ResourceError",
    "TestFamily",
]

__version__ = "0.1.0"
