"""Elementwise primitives.

Every implementation here accepts an optional ``out`` array of the result shape and
produces the same bits whether or not ``out`` is given; the graph executor relies on
that to run fused chains in place.
"""

from typing import Literal, Optional, get_args

import numpy as np

from pegrad.errors import DomainError, ShapeError
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import Tensor, TensorSpec, broadcast_shape, first_index

UnaryKind = Literal["neg", "exp", "log", "tanh", "sigmoid", "relu", "square", "sqrt"]
BinaryKind = Literal["add", "sub", "mul", "div", "max"]


def _unary_rule(x: TensorSpec) -> TensorSpec:
    if not x.is_real:
        raise ShapeError(f"elementwise op needs a real operand, got {x.dtype}")
    return x


def _binary_rule(a: TensorSpec, b: TensorSpec) -> TensorSpec:
    if not (a.is_real and b.is_real):
        raise ShapeError(f"elementwise op needs real operands, got {a.dtype} and {b.dtype}")
    if a.dtype != b.dtype:
        raise ShapeError(f"element types differ: {a.dtype} vs {b.dtype}")
    return TensorSpec(broadcast_shape(a.shape, b.shape), a.dtype)


def _unary(name: str, impl) -> Primitive:
    return register(Primitive(name, impl, _unary_rule, elementwise=True, accepts_out=True))


def _binary(name: str, impl) -> Primitive:
    return register(Primitive(name, impl, _binary_rule, elementwise=True, accepts_out=True))


def _log(x: Tensor, out: Optional[Tensor] = None) -> Tensor:
    bad = ~(x > 0)
    if bad.any():
        raise DomainError("log needs strictly positive input", first_index(bad))
    return np.log(x, out=out)


def _sqrt(x: Tensor, out: Optional[Tensor] = None) -> Tensor:
    bad = ~(x >= 0)
    if bad.any():
        raise DomainError("sqrt needs non-negative input", first_index(bad))
    return np.sqrt(x, out=out)


def _sigmoid(x: Tensor, out: Optional[Tensor] = None) -> Tensor:
    # 0.5 * (1 + tanh(x / 2)) never overflows
    out = np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    np.add(out, 1.0, out=out)
    return np.multiply(out, 0.5, out=out)


def _relu(x: Tensor, out: Optional[Tensor] = None) -> Tensor:
    return np.maximum(x, 0, out=out)


def _step(x: Tensor, out: Optional[Tensor] = None) -> Tensor:
    if out is None:
        return (x > 0).astype(x.dtype)
    np.copyto(out, x > 0)
    return out


def _greater_equal(a: Tensor, b: Tensor, out: Optional[Tensor] = None) -> Tensor:
    if out is None:
        return (a >= b).astype(np.result_type(a, b))
    np.copyto(out, a >= b)
    return out


def _divide(a: Tensor, b: Tensor, out: Optional[Tensor] = None) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.divide(a, b, out=out)


def _exp(x: Tensor, out: Optional[Tensor] = None) -> Tensor:
    with np.errstate(over="ignore"):
        return np.exp(x, out=out)


neg = _unary("neg", lambda x, out=None: np.negative(x, out=out))
exp = _unary("exp", _exp)
log = _unary("log", _log)
tanh = _unary("tanh", lambda x, out=None: np.tanh(x, out=out))
sigmoid = _unary("sigmoid", _sigmoid)
relu = _unary("relu", _relu)
square = _unary("square", lambda x, out=None: np.square(x, out=out))
sqrt = _unary("sqrt", _sqrt)
step = _unary("step", _step)

add = _binary("add", lambda a, b, out=None: np.add(a, b, out=out))
sub = _binary("sub", lambda a, b, out=None: np.subtract(a, b, out=out))
mul = _binary("mul", lambda a, b, out=None: np.multiply(a, b, out=out))
div = _binary("div", _divide)
maximum = _binary("maximum", lambda a, b, out=None: np.maximum(a, b, out=out))
greater_equal = _binary("greater_equal", _greater_equal)

_UNARY = {
    "neg": neg,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "square": square,
    "sqrt": sqrt,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "max": maximum}


def ew_unary(kind: UnaryKind, a):
    if kind not in get_args(UnaryKind):
        raise ValueError(f"Unknown unary kind: {kind}. Please choose from {get_args(UnaryKind)}")
    return _UNARY[kind](a)


def ew_binary(kind: BinaryKind, a, b):
    if kind not in get_args(BinaryKind):
        raise ValueError(
            f"Unknown binary kind: {kind}. Please choose from {get_args(BinaryKind)}"
        )
    return _BINARY[kind](a, b)
