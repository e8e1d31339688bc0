from typing import Literal, Sequence, Union, get_args

import numpy as np

from pegrad.errors import ShapeError
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import TensorSpec, normalize_axes

ReduceKind = Literal["sum", "mean", "max"]


def _reduce_rule(x: TensorSpec, axes: tuple[int, ...]) -> TensorSpec:
    if not x.is_real:
        raise ShapeError(f"reductions need a real operand, got {x.dtype}")
    normalize_axes(axes, x.ndim)
    return TensorSpec(tuple(s for i, s in enumerate(x.shape) if i not in axes), x.dtype)


def _max_rule(x: TensorSpec, axes: tuple[int, ...]) -> TensorSpec:
    spec = _reduce_rule(x, axes)
    if any(x.shape[a] == 0 for a in axes):
        raise ShapeError(f"max over an empty axis of {x.shape}")
    return spec


reduce_sum_p = register(
    Primitive("reduce_sum", lambda x, axes: np.asarray(np.sum(x, axis=axes)), _reduce_rule)
)
reduce_mean_p = register(
    Primitive("reduce_mean", lambda x, axes: np.asarray(np.mean(x, axis=axes)), _reduce_rule)
)
reduce_max_p = register(
    Primitive("reduce_max", lambda x, axes: np.asarray(np.max(x, axis=axes)), _max_rule)
)

_REDUCERS = {"sum": reduce_sum_p, "mean": reduce_mean_p, "max": reduce_max_p}


def reduce(kind: ReduceKind, a, axes: Union[int, Sequence[int], None] = None):
    """Reduce ``a`` over ``axes`` (all axes when None), dropping them."""
    if kind not in get_args(ReduceKind):
        raise ValueError(f"Unknown reduce kind: {kind}. Please choose from {get_args(ReduceKind)}")
    return _REDUCERS[kind](a, axes=normalize_axes(axes, len(a.shape)))


def reduce_sum(a, axes=None):
    return reduce("sum", a, axes)


def reduce_mean(a, axes=None):
    return reduce("mean", a, axes)


def reduce_max(a, axes=None):
    return reduce("max", a, axes)
