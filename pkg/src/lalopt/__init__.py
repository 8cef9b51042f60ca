"""Linearized augmented Lagrangian solver for equality-constrained programs."""

from .core import (
    BacktrackingBeta,
    ConstantBeta,
    IterationRecord,
    RunReport,
    SolverConfig,
    augmented_lagrangian,
    dual_update,
    solve,
)
from .model import QCQP, InstanceConstants, NLPOracle, stationarity

__version__ = "0.1.0"

__all__ = [
    "BacktrackingBeta",
    "ConstantBeta",
    "InstanceConstants",
    "IterationRecord",
    "NLPOracle",
    "QCQP",
    "RunReport",
    "SolverConfig",
    "augmented_lagrangian",
    "dual_update",
    "solve",
    "stationarity",
]
