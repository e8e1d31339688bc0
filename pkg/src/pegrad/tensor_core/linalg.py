import numpy as np

from pegrad.errors import ShapeError
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import TensorSpec


def _matmul_rule(a: TensorSpec, b: TensorSpec) -> TensorSpec:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype or not a.is_real:
        raise ShapeError(f"matmul needs equal real element types, got {a.dtype} and {b.dtype}")
    return TensorSpec((a.shape[0], b.shape[1]), a.dtype)


def _batch_matmul_rule(a: TensorSpec, b: TensorSpec) -> TensorSpec:
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"batch_matmul needs rank-3 operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"batch_matmul extents differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype or not a.is_real:
        raise ShapeError(f"batch_matmul needs equal real element types, got {a.dtype} and {b.dtype}")
    return TensorSpec((a.shape[0], a.shape[1], b.shape[2]), a.dtype)


matmul = register(Primitive("matmul", lambda a, b: np.matmul(a, b), _matmul_rule))
# [B, m, k] x [B, k, n] -> [B, m, n]; produced by batching rules
batch_matmul = register(Primitive("batch_matmul", lambda a, b: np.matmul(a, b), _batch_matmul_rule))
