"""Deterministic collapse dynamics on finite tensor-product spaces."""
from .errors import (
    CollapseFailed,
    CollapseLabError,
    DegenerateConditionalState,
    DegenerateTarget,
    DomainError,
    NumericError,
    ValidationError,
)
from .hilbert import OperatorMatrix, StateVector, TensorPartition
from .window import CollapseWindow

__version__ = "0.1.0"

__all__ = [
    "CollapseFailed",
    "CollapseLabError",
    "CollapseWindow",
    "DegenerateConditionalState",
    "DegenerateTarget",
    "DomainError",
    "NumericError",
    "OperatorMatrix",
    "StateVector",
    "TensorPartition",
    "ValidationError",
]
