from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from pegrad.errors import ShapeError

# tensors are plain C-contiguous numpy arrays; ops never write into their inputs
Tensor = np.ndarray
Shape = tuple[int, ...]

INDEX_DTYPE = np.dtype(np.int64)


@dataclass(frozen=True)
class TensorSpec:
    """Shape and element type of a tensor, without its data."""

    shape: Shape
    dtype: np.dtype

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "dtype", np.dtype(self.dtype))
        if any(s < 0 for s in self.shape):
            raise ShapeError(f"negative extent in shape {self.shape}")

    @classmethod
    def of(cls, value: Union[np.ndarray, "TensorSpec"]) -> "TensorSpec":
        if isinstance(value, TensorSpec):
            return value
        return cls(tuple(value.shape), value.dtype)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nbytes(self) -> int:
        return self.size * self.dtype.itemsize

    @property
    def is_real(self) -> bool:
        return self.dtype.kind == "f"


def as_tensor(value, dtype=None) -> Tensor:
    """Return ``value`` as a C-contiguous array of ``dtype``."""
    return np.ascontiguousarray(value, dtype=dtype)


def broadcast_shape(*shapes: Shape) -> Shape:
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError:
        raise ShapeError(f"shapes {list(shapes)} do not broadcast")


def normalize_axes(axes: Union[int, Sequence[int], None], ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} is out of range for rank {ndim}")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(normalized))


def first_index(mask: np.ndarray) -> tuple[int, ...]:
    """Multi-index of the first true element of ``mask``."""
    flat = int(np.argmax(mask.reshape(-1)))
    return tuple(int(i) for i in np.unravel_index(flat, mask.shape))
