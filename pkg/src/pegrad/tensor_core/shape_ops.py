"""Layout primitives: reshape, transpose, broadcasting and axis slicing."""

from typing import Sequence

import numpy as np

from pegrad.errors import ShapeError
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import Shape, Tensor, TensorSpec, broadcast_shape


def _reshape_rule(x: TensorSpec, shape: Shape) -> TensorSpec:
    target = TensorSpec(shape, x.dtype)
    if target.size != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    return target


def _transpose_rule(x: TensorSpec, perm: tuple[int, ...]) -> TensorSpec:
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"{perm} is not a permutation of the axes of {x.shape}")
    return TensorSpec(tuple(x.shape[p] for p in perm), x.dtype)


def _broadcast_rule(x: TensorSpec, shape: Shape) -> TensorSpec:
    if broadcast_shape(x.shape, shape) != tuple(shape):
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}")
    return TensorSpec(shape, x.dtype)


def _sum_to_rule(x: TensorSpec, shape: Shape) -> TensorSpec:
    if broadcast_shape(x.shape, shape) != x.shape:
        raise ShapeError(f"cannot sum {x.shape} down to {shape}")
    return TensorSpec(shape, x.dtype)


def _check_axis(x: TensorSpec, axis: int) -> None:
    if not 0 <= axis < x.ndim:
        raise ShapeError(f"axis {axis} is out of range for shape {x.shape}")


def _slice_rule(x: TensorSpec, axis: int, start: int, stop: int) -> TensorSpec:
    _check_axis(x, axis)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] is out of range for axis {axis} of {x.shape}")
    shape = list(x.shape)
    shape[axis] = stop - start
    return TensorSpec(tuple(shape), x.dtype)


def _concat_rule(*xs: TensorSpec, axis: int) -> TensorSpec:
    if not xs:
        raise ShapeError("concat needs at least one operand")
    first = xs[0]
    _check_axis(first, axis)
    for x in xs[1:]:
        if x.dtype != first.dtype or x.ndim != first.ndim:
            raise ShapeError(f"cannot concatenate {x.shape} with {first.shape}")
        if x.shape[:axis] != first.shape[:axis] or x.shape[axis + 1 :] != first.shape[axis + 1 :]:
            raise ShapeError(f"cannot concatenate {x.shape} with {first.shape} along {axis}")
    shape = list(first.shape)
    shape[axis] = sum(x.shape[axis] for x in xs)
    return TensorSpec(tuple(shape), first.dtype)


def _pad_rule(x: TensorSpec, axis: int, start: int, size: int) -> TensorSpec:
    _check_axis(x, axis)
    if start < 0 or start + x.shape[axis] > size:
        raise ShapeError(f"cannot place {x.shape[axis]} rows at {start} in an axis of {size}")
    shape = list(x.shape)
    shape[axis] = size
    return TensorSpec(tuple(shape), x.dtype)


def _shift_rule(x: TensorSpec, axis: int) -> TensorSpec:
    _check_axis(x, axis)
    return x


def _axis_index(ndim: int, axis: int, index) -> tuple:
    return (slice(None),) * axis + (index,) + (slice(None),) * (ndim - axis - 1)


def _sum_to_shape(x: Tensor, shape: Shape) -> Tensor:
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(shape) if s == 1 and x.shape[lead + i] != 1
    )
    summed = np.sum(x, axis=axes) if axes else x.copy()
    return np.ascontiguousarray(np.reshape(summed, shape))


def _pad_axis(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=x.dtype)
    out[_axis_index(x.ndim, axis, slice(start, start + x.shape[axis]))] = x
    return out


def _shift_right(x: Tensor, axis: int) -> Tensor:
    out = np.zeros_like(x)
    out[_axis_index(x.ndim, axis, slice(1, None))] = x[_axis_index(x.ndim, axis, slice(None, -1))]
    return out


_reshape = register(
    Primitive("reshape", lambda x, shape: np.ascontiguousarray(x).reshape(shape), _reshape_rule)
)
transpose_p = register(
    Primitive(
        "transpose", lambda x, perm: np.ascontiguousarray(np.transpose(x, perm)), _transpose_rule
    )
)
broadcast_to_p = register(
    Primitive(
        "broadcast_to",
        lambda x, shape: np.ascontiguousarray(np.broadcast_to(x, shape)),
        _broadcast_rule,
    )
)
sum_to_shape_p = register(Primitive("sum_to_shape", _sum_to_shape, _sum_to_rule))
slice_axis_p = register(
    Primitive(
        "slice_axis",
        lambda x, axis, start, stop: np.ascontiguousarray(
            x[_axis_index(x.ndim, axis, slice(start, stop))]
        ),
        _slice_rule,
    )
)
concat_p = register(
    Primitive("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_rule)
)
pad_axis_p = register(Primitive("pad_axis", _pad_axis, _pad_rule))
shift_right_p = register(Primitive("shift_right", _shift_right, _shift_rule))


def reshape(x, shape: Sequence[int]):
    """Reshape ``x``; a single ``-1`` extent is inferred."""
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) > 1:
        raise ShapeError(f"at most one inferred extent allowed in {shape}")
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1], dtype=np.int64))
        total = int(np.prod(x.shape, dtype=np.int64))
        if known == 0 or total % known:
            raise ShapeError(f"cannot reshape {tuple(x.shape)} into {shape}")
        shape = tuple(total // known if s == -1 else s for s in shape)
    return _reshape(x, shape=shape)


def transpose(x, perm: Sequence[int] = None):
    if perm is None:
        perm = tuple(reversed(range(len(x.shape))))
    return transpose_p(x, perm=tuple(int(p) for p in perm))


def broadcast_to(x, shape: Sequence[int]):
    return broadcast_to_p(x, shape=tuple(int(s) for s in shape))


def sum_to_shape(x, shape: Sequence[int]):
    return sum_to_shape_p(x, shape=tuple(int(s) for s in shape))


def slice_axis(x, axis: int, start: int, stop: int):
    return slice_axis_p(x, axis=int(axis), start=int(start), stop=int(stop))


def concat(xs, axis: int):
    return concat_p(*xs, axis=int(axis))


def pad_axis(x, axis: int, start: int, size: int):
    return pad_axis_p(x, axis=int(axis), start=int(start), size=int(size))


def shift_right(x, axis: int):
    """Shift ``x`` one step along ``axis``, filling the first slot with zeros."""
    return shift_right_p(x, axis=int(axis))
