"""prunemap: pruned FCN roadmaps for biomass mapping, budgeted model selection, and an audit ledger."""
__version__ = "0.1.0"

from .errors import (
    DivergenceDetected,
    InvalidArgument,
    NoFeasibleModel,
    NonFiniteValue,
    NotPrunableLayer,
    PrunemapError,
    ShapeMismatch,
    SurgeryShapeError,
    UnknownField,
    UnknownPlant,
    UnknownYieldFactor,
    ValidationError,
)

__all__ = [
    "DivergenceDetected",
    "InvalidArgument",
    "NoFeasibleModel",
    "NonFiniteValue",
    "NotPrunableLayer",
    "PrunemapError",
    "ShapeMismatch",
    "SurgeryShapeError",
    "UnknownField",
    "UnknownPlant",
    "UnknownYieldFactor",
    "ValidationError",
    "__version__",
]
