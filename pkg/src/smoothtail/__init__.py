"""Simulation and tail analysis of multivariate smoothing-transform fixed points."""

__version__ = "0.1.0"

from .model import (
    Branching,
    FiniteSupport,
    LognormalRotation,
    LognormalScalarMatrix,
    ModelSpec,
    QLaw,
    ValidationReport,
    validate,
)

__all__ = [
    "Branching",
    "FiniteSupport",
    "LognormalRotation",
    "LognormalScalarMatrix",
    "ModelSpec",
    "QLaw",
    "ValidationReport",
    "validate",
    "__version__",
]
