import numpy as np

from pegrad.errors import IndexRangeError, ShapeError
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import Tensor, TensorSpec, first_index


def _check_ids(ids: Tensor, num_rows: int) -> None:
    bad = (ids < 0) | (ids >= num_rows)
    if bad.any():
        raise IndexRangeError(f"id outside [0, {num_rows})", first_index(bad))


def _gather_rule(table: TensorSpec, ids: TensorSpec) -> TensorSpec:
    if table.ndim != 2 or not table.is_real:
        raise ShapeError(f"gather_rows needs a real [V,E] table, got {table.shape}")
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"gather_rows needs integer ids, got {ids.dtype}")
    return TensorSpec(ids.shape + (table.shape[1],), table.dtype)


def _gather_rows(table: Tensor, ids: Tensor) -> Tensor:
    _check_ids(ids, table.shape[0])
    return np.take(table, ids, axis=0)


def _scatter_rule(g: TensorSpec, ids: TensorSpec, num_rows: int, batch_dims: int) -> TensorSpec:
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"scatter_add needs integer ids, got {ids.dtype}")
    if g.shape[:-1] != ids.shape or g.ndim < 1 + batch_dims:
        raise ShapeError(f"scatter_add rows {g.shape} do not match ids {ids.shape}")
    return TensorSpec(g.shape[:batch_dims] + (num_rows, g.shape[-1]), g.dtype)


def _scatter_add(g: Tensor, ids: Tensor, num_rows: int, batch_dims: int) -> Tensor:
    _check_ids(ids, num_rows)
    width = g.shape[-1]
    if batch_dims == 0:
        out = np.zeros((num_rows, width), dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, width))
        return out
    # one table per leading example: offset ids into a stacked [B*V, E] table
    batch = g.shape[0]
    offsets = np.arange(batch, dtype=ids.dtype).reshape((batch,) + (1,) * (ids.ndim - 1))
    flat_ids = (ids + offsets * num_rows).reshape(-1)
    out = np.zeros((batch * num_rows, width), dtype=g.dtype)
    np.add.at(out, flat_ids, g.reshape(-1, width))
    return out.reshape(batch, num_rows, width)


gather_rows = register(Primitive("gather_rows", _gather_rows, _gather_rule))
scatter_add_p = register(Primitive("scatter_add", _scatter_add, _scatter_rule))


def scatter_add(grad_out, ids, num_rows: int, batch_dims: int = 0):
    """Accumulate ``grad_out`` rows into a [num_rows, E] table; duplicate ids sum."""
    return scatter_add_p(grad_out, ids, num_rows=int(num_rows), batch_dims=int(batch_dims))
