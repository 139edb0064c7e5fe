"""echolab: deterministic calculus and Monte-Carlo simulation of Loschmidt
echoes for deformed Wigner matrix models."""

__version__ = "0.1.0"

from . import errors
from .mde import (
    BulkSet,
    Deformation,
    MdeEvaluator,
    MdeSolution,
    SpectralPoint,
    boundary_m,
    check_admissible,
    kappa_bulk,
    scdos,
    semicircle_stieltjes,
    solve_mde,
)

__all__ = [
    "errors",
    "BulkSet",
    "Deformation",
    "MdeEvaluator",
    "MdeSolution",
    "SpectralPoint",
    "boundary_m",
    "check_admissible",
    "kappa_bulk",
    "scdos",
    "semicircle_stieltjes",
    "solve_mde",
    "__version__",
]
