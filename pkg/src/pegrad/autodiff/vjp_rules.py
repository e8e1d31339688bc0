"""Vector-Jacobian product rules, one per primitive.

A rule receives the output cotangent and a :class:`VjpContext` and returns one
cotangent per operand (``None`` where the operand needs none). Rules are written
with primitives, so the backward program is itself a tape that can be optimized
and batched.
"""

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from pegrad.autodiff.tape import Tracer
from pegrad.errors import UnsupportedOpError
from pegrad.tensor_core import conv, elementwise as ew, linalg, losses, recurrent
from pegrad.tensor_core import shape_ops as so
from pegrad.tensor_core.embedding import gather_rows, scatter_add
from pegrad.tensor_core.tensor import TensorSpec


@dataclass(frozen=True)
class VjpContext:
    inputs: Sequence[Tracer]
    output: Tracer
    attrs: Mapping[str, Any]
    needs: Sequence[bool]


@dataclass(frozen=True)
class PartialCotangent:
    """Cotangent that is non-zero only on ``[start, stop)`` of one axis."""

    axis: int
    start: int
    stop: int
    value: Tracer
    spec: TensorSpec


Cotangent = Union[Tracer, PartialCotangent, None]


@dataclass(frozen=True)
class VjpRule:
    """A registered rule and the forward values it keeps alive.

    :param saves: Subset of ``{"inputs", "output"}`` read by the rule.
    """

    kind: str
    fn: Callable[[Tracer, VjpContext], tuple[Cotangent, ...]]
    saves: frozenset[str]


_RULES: dict[str, VjpRule] = {}


def defvjp(kind: str, saves: Sequence[str] = ()):
    def decorator(fn):
        _RULES[kind] = VjpRule(kind, fn, frozenset(saves))
        return fn

    return decorator


def vjp_rule(kind: str) -> VjpRule:
    try:
        return _RULES[kind]
    except KeyError:
        raise UnsupportedOpError(kind, f"no VJP rule; registered kinds: {sorted(_RULES)}")


def registered_rules() -> list[str]:
    return sorted(_RULES)


def unbroadcast(g: Tracer, spec: TensorSpec) -> Tracer:
    if g.shape == spec.shape:
        return g
    return so.sum_to_shape(g, spec.shape)


def _when(need: bool, make: Callable[[], Cotangent]) -> Cotangent:
    return make() if need else None


# elementwise


@defvjp("neg")
def _neg(g, ctx):
    return (ew.neg(g),)


@defvjp("exp", saves=["output"])
def _exp(g, ctx):
    return (ew.mul(g, ctx.output),)


@defvjp("log", saves=["inputs"])
def _log(g, ctx):
    return (ew.div(g, ctx.inputs[0]),)


@defvjp("tanh", saves=["output"])
def _tanh(g, ctx):
    return (ew.mul(g, ew.sub(1.0, ew.square(ctx.output))),)


@defvjp("sigmoid", saves=["output"])
def _sigmoid(g, ctx):
    y = ctx.output
    return (ew.mul(g, ew.mul(y, ew.sub(1.0, y))),)


@defvjp("relu", saves=["output"])
def _relu(g, ctx):
    # relu(x) > 0 exactly where x > 0
    return (ew.mul(g, ew.step(ctx.output)),)


@defvjp("square", saves=["inputs"])
def _square(g, ctx):
    return (ew.mul(g, ew.mul(2.0, ctx.inputs[0])),)


@defvjp("sqrt", saves=["output"])
def _sqrt(g, ctx):
    return (ew.div(g, ew.mul(2.0, ctx.output)),)


@defvjp("step")
def _step(g, ctx):
    return (None,)


@defvjp("greater_equal")
def _greater_equal(g, ctx):
    return (None, None)


@defvjp("add")
def _add(g, ctx):
    a, b = ctx.inputs
    return (
        _when(ctx.needs[0], lambda: unbroadcast(g, a.spec)),
        _when(ctx.needs[1], lambda: unbroadcast(g, b.spec)),
    )


@defvjp("sub")
def _sub(g, ctx):
    a, b = ctx.inputs
    return (
        _when(ctx.needs[0], lambda: unbroadcast(g, a.spec)),
        _when(ctx.needs[1], lambda: unbroadcast(ew.neg(g), b.spec)),
    )


@defvjp("mul", saves=["inputs"])
def _mul(g, ctx):
    a, b = ctx.inputs
    return (
        _when(ctx.needs[0], lambda: unbroadcast(ew.mul(g, b), a.spec)),
        _when(ctx.needs[1], lambda: unbroadcast(ew.mul(g, a), b.spec)),
    )


@defvjp("div", saves=["inputs"])
def _div(g, ctx):
    a, b = ctx.inputs
    return (
        _when(ctx.needs[0], lambda: unbroadcast(ew.div(g, b), a.spec)),
        _when(ctx.needs[1], lambda: unbroadcast(ew.neg(ew.div(ew.mul(g, a), ew.square(b))), b.spec)),
    )


@defvjp("maximum", saves=["inputs"])
def _maximum(g, ctx):
    a, b = ctx.inputs
    mask = ew.greater_equal(a, b)
    return (
        _when(ctx.needs[0], lambda: unbroadcast(ew.mul(g, mask), a.spec)),
        _when(ctx.needs[1], lambda: unbroadcast(ew.mul(g, ew.sub(1.0, mask)), b.spec)),
    )


# linear algebra


@defvjp("matmul", saves=["inputs"])
def _matmul(g, ctx):
    a, b = ctx.inputs
    return (
        _when(ctx.needs[0], lambda: linalg.matmul(g, so.transpose(b))),
        _when(ctx.needs[1], lambda: linalg.matmul(so.transpose(a), g)),
    )


@defvjp("batch_matmul", saves=["inputs"])
def _batch_matmul(g, ctx):
    a, b = ctx.inputs
    return (
        _when(ctx.needs[0], lambda: linalg.batch_matmul(g, so.transpose(b, (0, 2, 1)))),
        _when(ctx.needs[1], lambda: linalg.batch_matmul(so.transpose(a, (0, 2, 1)), g)),
    )


# layout


@defvjp("reshape")
def _reshape(g, ctx):
    return (so.reshape(g, ctx.inputs[0].shape),)


@defvjp("transpose")
def _transpose(g, ctx):
    perm = ctx.attrs["perm"]
    return (so.transpose(g, tuple(int(i) for i in np.argsort(perm))),)


@defvjp("broadcast_to")
def _broadcast_to(g, ctx):
    return (unbroadcast(g, ctx.inputs[0].spec),)


@defvjp("sum_to_shape")
def _sum_to_shape(g, ctx):
    return (so.broadcast_to(g, ctx.inputs[0].shape),)


@defvjp("slice_axis")
def _slice_axis(g, ctx):
    attrs = ctx.attrs
    return (PartialCotangent(attrs["axis"], attrs["start"], attrs["stop"], g, ctx.inputs[0].spec),)


@defvjp("concat")
def _concat(g, ctx):
    axis = ctx.attrs["axis"]
    cotangents = []
    offset = 0
    for x, need in zip(ctx.inputs, ctx.needs):
        width = x.shape[axis]
        start = offset
        cotangents.append(
            _when(need, lambda start=start, width=width: so.slice_axis(g, axis, start, start + width))
        )
        offset += width
    return tuple(cotangents)


@defvjp("pad_axis")
def _pad_axis(g, ctx):
    axis, start = ctx.attrs["axis"], ctx.attrs["start"]
    return (so.slice_axis(g, axis, start, start + ctx.inputs[0].shape[axis]),)


@defvjp("shift_right")
def _shift_right(g, ctx):
    axis = ctx.attrs["axis"]
    length = g.shape[axis]
    if length == 1:
        return (g.builder.zeros(g.spec),)
    return (so.pad_axis(so.slice_axis(g, axis, 1, length), axis, 0, length),)


# reductions


def _keepdims(g: Tracer, x: TensorSpec, axes) -> Tracer:
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    return so.broadcast_to(so.reshape(g, kept), x.shape)


@defvjp("reduce_sum")
def _reduce_sum(g, ctx):
    return (_keepdims(g, ctx.inputs[0].spec, ctx.attrs["axes"]),)


@defvjp("reduce_mean")
def _reduce_mean(g, ctx):
    x = ctx.inputs[0].spec
    axes = ctx.attrs["axes"]
    count = int(np.prod([x.shape[a] for a in axes], dtype=np.int64))
    return (ew.div(_keepdims(g, x, axes), float(count)),)


@defvjp("reduce_max", saves=["inputs", "output"])
def _reduce_max(g, ctx):
    x = ctx.inputs[0]
    axes = ctx.attrs["axes"]
    mask = ew.greater_equal(x, _keepdims(ctx.output, x.spec, axes))
    return (ew.mul(_keepdims(g, x.spec, axes), mask),)


# convolution and pooling


@defvjp("conv2d", saves=["inputs"])
def _conv2d(g, ctx):
    x, w = ctx.inputs
    stride, pad = ctx.attrs["stride"], ctx.attrs["pad"]
    return (
        _when(ctx.needs[0], lambda: conv.conv2d_grad_input(g, w, x.shape[2:], stride, pad)),
        _when(ctx.needs[1], lambda: conv.conv2d_grad_weight(x, g, w.shape[2:], stride, pad)),
    )


@defvjp("max_pool2d", saves=["inputs"])
def _max_pool2d(g, ctx):
    x = ctx.inputs[0]
    return (
        conv.max_pool2d_grad_p(
            x, g, k=ctx.attrs["k"], stride=ctx.attrs["stride"], input_hw=tuple(x.shape[2:])
        ),
    )


@defvjp("avg_pool2d")
def _avg_pool2d(g, ctx):
    x = ctx.inputs[0]
    return (
        conv.avg_pool2d_grad_p(
            g, k=ctx.attrs["k"], stride=ctx.attrs["stride"], input_hw=tuple(x.shape[2:])
        ),
    )


# embedding, loss, recurrence


@defvjp("gather_rows", saves=["inputs"])
def _gather_rows(g, ctx):
    table, ids = ctx.inputs
    return (scatter_add(g, ids, table.shape[0]), None)


@defvjp("scatter_add", saves=["inputs"])
def _scatter_add(g, ctx):
    if ctx.attrs["batch_dims"]:
        raise UnsupportedOpError("scatter_add", "no VJP for the per-example form")
    _, ids = ctx.inputs
    return (gather_rows(g, ids), None)


@defvjp("softmax_xent", saves=["inputs"])
def _softmax_xent(g, ctx):
    logits, labels = ctx.inputs
    return (losses.softmax_xent_grad(logits, labels, g), None)


@defvjp("lstm_scan", saves=["inputs", "output"])
def _lstm_scan(g, ctx):
    xp, u = ctx.inputs
    n, length, gates = xp.shape
    hidden = u.shape[0]
    dxp = recurrent.lstm_scan_grad(xp, u, g)
    du = None
    if ctx.needs[1]:
        previous = so.reshape(so.shift_right(ctx.output, 1), (n * length, hidden))
        du = linalg.matmul(so.transpose(previous), so.reshape(dxp, (n * length, gates)))
    return (dxp if ctx.needs[0] else None, du)

