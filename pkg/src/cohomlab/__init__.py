"""Transfer-operator numerics for cohomological equations over random,
sequential and symbolic expanding dynamics."""

from . import errors
from .errors import (
    BackendMismatch,
    CohomlabError,
    DegenerateDensity,
    DomainMismatch,
    FitFailed,
    HorizonExceeded,
    InvalidParameter,
    NoSpectralGap,
    NonConvergence,
    NonEquivariantMeasure,
    NotACoboundary,
    NotBracketable,
    NotPrimitive,
    SchemaError,
    TailNotConverged,
    TruncationWarning,
)

__version__ = "0.1.0"

__all__ = ["errors", "__version__",
           "BackendMismatch",
           "CohomlabError",
           "DegenerateDensity",
           "DomainMismatch",
           "FitFailed",
           "HorizonExceeded",
           "InvalidParameter",
           "NoSpectralGap",
           "NonConvergence",
           "NonEquivariantMeasure",
           "NotACoboundary",
           "NotBracketable",
           "NotPrimitive",
           "SchemaError",
           "TailNotConverged",
           "TruncationWarning",
           ]
