"""Cover times of confined random walks and cover levels of tilted random interlacements on lattice domains."""

__version__ = "0.1.0"

from .domain import Domain, ShapeSpec, TargetSet, build_domain, build_target
from .errors import ConfcoverError, NumericalError, ValidationError
from .reference_ball import BallReference
from .spectral import EigenPair, confined_kernel, solve_principal_eigenpair

__all__ = [
    "__version__",
    "BallReference",
    "ConfcoverError",
    "Domain",
    "EigenPair",
    "NumericalError",
    "ShapeSpec",
    "TargetSet",
    "ValidationError",
    "build_domain",
    "build_target",
    "confined_kernel",
    "solve_principal_eigenpair",
]
