"""Batched forward-mode AD with sparsity detection and coloring."""
from .batch import (
    BlockDerivatives,
    BlockEvaluator,
    DualBuffers,
    NonFiniteError,
    SharedPatternBatch,
    StructureInfo,
    analyze,
    FdReport,
    batch_eval,
    batch_hessian,
    batch_jacobian,
    batch_values,
    detect_sparsity,
    dual_buffer_elements,
    finite_difference_check,
)
from .coloring import Coloring, RecoveryCollision, SparsityPattern, color_hessian, color_jacobian, verify_coloring
from .dual import DualBatch, cos, sin, spmm, vstack
from .tracer import IndexTracer

__all__ = [
    "BlockDerivatives", "BlockEvaluator", "Coloring", "DualBatch", "DualBuffers", "IndexTracer",
    "NonFiniteError", "RecoveryCollision", "SharedPatternBatch", "SparsityPattern", "StructureInfo",
    "FdReport", "analyze", "batch_eval", "batch_hessian", "batch_jacobian", "batch_values", "color_hessian", "color_jacobian",
    "cos", "detect_sparsity", "dual_buffer_elements", "finite_difference_check", "sin", "spmm",
    "verify_coloring", "vstack",
]
