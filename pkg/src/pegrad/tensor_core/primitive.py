from dataclasses import dataclass
from numbers import Number
from typing import Any, Callable, Optional

import numpy as np

from pegrad.errors import TraceError, UnsupportedOpError
from pegrad.tensor_core.tensor import Tensor, TensorSpec


class Traced:
    """A symbolic value produced while recording a program.

    Subclasses carry a ``builder`` exposing ``emit(primitive, operands, attrs)``
    which appends a node and returns a new traced value.
    """

    builder: Any
    spec: TensorSpec

    @property
    def shape(self) -> tuple[int, ...]:
        return self.spec.shape

    @property
    def dtype(self) -> np.dtype:
        return self.spec.dtype

    @property
    def ndim(self) -> int:
        return self.spec.ndim


@dataclass(frozen=True, eq=False)
class Primitive:
    """A tensor-core operation.

    :param name: Stable op kind used by the VJP and batching registries.
    :param impl: Eager numpy implementation ``impl(*arrays, **attrs)``. When
        ``accepts_out`` is set it also takes ``out=`` and writes into it.
    :param shape_rule: ``shape_rule(*specs, **attrs) -> TensorSpec``, raising
        ``ShapeError`` on invalid operands.
    :param elementwise: Whether the op maps elements independently (fusible).
    """

    name: str
    impl: Callable[..., Tensor]
    shape_rule: Callable[..., TensorSpec]
    elementwise: bool = False
    accepts_out: bool = False

    def __call__(self, *operands, **attrs):
        reference = _reference_dtype(operands)
        operands = tuple(_lift_scalar(o, reference) for o in operands)
        traced = [o for o in operands if isinstance(o, Traced)]
        if traced:
            builder = traced[0].builder
            if any(t.builder is not builder for t in traced[1:]):
                raise TraceError(f"{self.name} mixes values from different recordings")
            return builder.emit(self, operands, attrs)
        arrays = tuple(np.asarray(o) for o in operands)
        self.abstract_eval(*(TensorSpec.of(a) for a in arrays), **attrs)
        return self.impl(*arrays, **attrs)

    def abstract_eval(self, *specs: TensorSpec, **attrs) -> TensorSpec:
        return self.shape_rule(*specs, **attrs)

    def evaluate(self, *arrays: Tensor, out: Optional[Tensor] = None, **attrs) -> Tensor:
        if out is not None and self.accepts_out:
            return self.impl(*arrays, out=out, **attrs)
        return self.impl(*arrays, **attrs)

    def __repr__(self) -> str:
        return f"Primitive({self.name})"


_REGISTRY: dict[str, Primitive] = {}


def register(prim: Primitive) -> Primitive:
    if prim.name in _REGISTRY:
        raise ValueError(f"primitive {prim.name} registered twice")
    _REGISTRY[prim.name] = prim
    return prim


def get_primitive(name: str) -> Primitive:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnsupportedOpError(name, "no such primitive")


def registered_primitives() -> list[str]:
    return sorted(_REGISTRY)


def _reference_dtype(operands) -> Optional[np.dtype]:
    for o in operands:
        if isinstance(o, Traced):
            return o.dtype
        if isinstance(o, np.ndarray) and o.dtype.kind == "f":
            return o.dtype
    return None


def _lift_scalar(value, reference: Optional[np.dtype]):
    if isinstance(value, (Traced, np.ndarray)):
        return value
    if isinstance(value, (Number, np.generic)):
        return np.asarray(value, dtype=reference if reference is not None else None)
    raise TraceError(
        f"operand of type {type(value).__name__} is not a tensor; programs may only "
        "combine tensors, traced values and scalars"
    )
