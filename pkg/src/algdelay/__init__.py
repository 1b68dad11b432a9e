"""Solution manifolds of differential equations with algebraically defined delays."""
from .errors import ConstructionError, ConvergenceError, DomainError, NotInImageError
from .model import ModelSpec, StatePoint
from .scenarios import builtin, load_scenario
from .segments import ScalarSegment, VectorSegment

__all__ = [
    "ConstructionError",
    "ConvergenceError",
    "DomainError",
    "ModelSpec",
    "NotInImageError",
    "ScalarSegment",
    "StatePoint",
    "VectorSegment",
    "builtin",
    "load_scenario",
]

__version__ = "0.1.0"
