"""Conditional sampling with deep tensor-train inverse Rosenblatt transports."""
from .basis import Basis1D
from .diagnostics import HellingerEstimate, conditional_error_histogram, hellinger_from_samples, joint_hellinger
from .dirt import DirtConfig, DirtConditional, DirtTransport, TemperingSchedule, build_dirt, sir_preset
from .errors import (
    BuildError,
    DegenerateMassError,
    DirtFormatError,
    DomainError,
    StructureError,
    UnsupportedOperationError,
)
from .models import make_model
from .precondition import (
    HMatrices,
    PreconditionedTarget,
    Preconditioner,
    build_preconditioner,
    estimate_h_gaussian,
    estimate_h_general,
)
from .serialize import load_dirt, save_dirt
from .sirt import ReferenceMeasure, SirtTransport
from .tensor_train import CrossConfig, FunctionalTensorTrain, tt_cross

__version__ = "0.1.0"

__all__ = [
    "Basis1D",
    "CrossConfig",
    "FunctionalTensorTrain",
    "tt_cross",
    "ReferenceMeasure",
    "SirtTransport",
    "TemperingSchedule",
    "DirtConfig",
    "DirtTransport",
    "DirtConditional",
    "build_dirt",
    "sir_preset",
    "HMatrices",
    "Preconditioner",
    "PreconditionedTarget",
    "build_preconditioner",
    "estimate_h_general",
    "estimate_h_gaussian",
    "HellingerEstimate",
    "hellinger_from_samples",
    "joint_hellinger",
    "conditional_error_histogram",
    "make_model",
    "save_dirt",
    "load_dirt",
    "BuildError",
    "DegenerateMassError",
    "DirtFormatError",
    "DomainError",
    "StructureError",
    "UnsupportedOperationError",
]
