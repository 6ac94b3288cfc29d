"""Explicit uncertainty-principle constants under Ricci lower bounds, with numerical checks."""

from .constants import ConstantReport, ProblemParams, compute_E0, compute_kappa
from .errors import ConvergenceError, DomainError, PreconditionError, RicciUCPError, VerificationError
from .model_geometry import CurvatureParams, RadialProfile

__all__ = [
    "ConstantReport",
    "ConvergenceError",
    "CurvatureParams",
    "DomainError",
    "PreconditionError",
    "ProblemParams",
    "RadialProfile",
    "RicciUCPError",
    "VerificationError",
    "compute_E0",
    "compute_kappa",
]

__version__ = "0.1.0"
