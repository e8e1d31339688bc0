"""Batching rules: how each primitive acts on values carrying a leading batch axis.

A rule receives the operands (already re-recorded in the batched program), a flag per
operand saying whether it is batched, the node's attributes and the batch size. It
returns a batched tracer whose leading axis is the batch axis.
"""

from typing import Callable, Mapping, Sequence

from pegrad.autodiff.tape import Tracer
from pegrad.errors import UnsupportedOpError
from pegrad.tensor_core import conv, linalg
from pegrad.tensor_core import shape_ops as so
from pegrad.tensor_core.embedding import gather_rows, scatter_add
from pegrad.tensor_core.primitive import get_primitive

BatchRule = Callable[[Sequence[Tracer], Sequence[bool], Mapping, int], Tracer]

_RULES: dict[str, BatchRule] = {}


def defbatch(*kinds: str):
    def decorator(fn):
        for kind in kinds:
            _RULES[kind] = fn
        return fn

    return decorator


def batching_rule(kind: str) -> BatchRule:
    try:
        return _RULES[kind]
    except KeyError:
        raise UnsupportedOpError(kind, "no batching rule")


def registered_batching_rules() -> list[str]:
    return sorted(_RULES)


def _emit(kind: str, *operands, **attrs) -> Tracer:
    return get_primitive(kind)(*operands, **attrs)


def expand(x: Tracer, is_batched: bool, size: int) -> Tracer:
    """Give an unbatched value an explicit leading batch axis."""
    if is_batched:
        return x
    return so.broadcast_to(so.reshape(x, (1,) + x.shape), (size,) + x.shape)


def fold(x: Tracer, is_batched: bool, size: int) -> Tracer:
    """Merge the batch axis into the leading data axis: (B, N, ...) -> (B*N, ...)."""
    x = expand(x, is_batched, size)
    return so.reshape(x, (x.shape[0] * x.shape[1],) + x.shape[2:])


def unfold(x: Tracer, size: int) -> Tracer:
    return so.reshape(x, (size, x.shape[0] // size) + x.shape[1:])


def _unsupported_batched(kind: str, flags: Sequence[bool], allowed: Sequence[int]) -> None:
    for i, flag in enumerate(flags):
        if flag and i not in allowed:
            raise UnsupportedOpError(kind, f"operand {i} cannot carry a batch axis")


def _elementwise(kind: str):
    def rule(args, batched, attrs, size):
        ranks = [a.ndim - 1 if b else a.ndim for a, b in zip(args, batched)]
        rank = max(ranks)
        aligned = []
        for a, b, r in zip(args, batched, ranks):
            if b and r < rank:
                a = so.reshape(a, (size,) + (1,) * (rank - r) + a.shape[1:])
            aligned.append(a)
        return _emit(kind, *aligned, **attrs)

    return rule


for _kind in (
    "neg",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "square",
    "sqrt",
    "step",
    "add",
    "sub",
    "mul",
    "div",
    "maximum",
    "greater_equal",
):
    _RULES[_kind] = _elementwise(_kind)


def _reduction(kind: str):
    def rule(args, batched, attrs, size):
        return _emit(kind, args[0], axes=tuple(a + 1 for a in attrs["axes"]))

    return rule


for _kind in ("reduce_sum", "reduce_mean", "reduce_max"):
    _RULES[_kind] = _reduction(_kind)


@defbatch("reshape")
def _reshape(args, batched, attrs, size):
    return so.reshape(args[0], (size,) + tuple(attrs["shape"]))


@defbatch("transpose")
def _transpose(args, batched, attrs, size):
    return so.transpose(args[0], (0,) + tuple(p + 1 for p in attrs["perm"]))


@defbatch("broadcast_to")
def _broadcast_to(args, batched, attrs, size):
    x = args[0]
    target = tuple(attrs["shape"])
    per_example = x.shape[1:]
    x = so.reshape(x, (size,) + (1,) * (len(target) - len(per_example)) + per_example)
    return so.broadcast_to(x, (size,) + target)


@defbatch("sum_to_shape")
def _sum_to_shape(args, batched, attrs, size):
    x = args[0]
    target = tuple(attrs["shape"])
    lead = x.ndim - 1 - len(target)
    summed = so.sum_to_shape(x, (size,) + (1,) * lead + target)
    return so.reshape(summed, (size,) + target)


@defbatch("matmul")
def _matmul(args, batched, attrs, size):
    a, b = args
    if batched[0] and batched[1]:
        return linalg.batch_matmul(a, b)
    if batched[0]:
        m, k = a.shape[1:]
        out = linalg.matmul(so.reshape(a, (size * m, k)), b)
        return so.reshape(out, (size, m, b.shape[1]))
    # only b carries the batch: (a @ b_i) = (b_i^T a^T)^T
    k, n = b.shape[1:]
    bt = so.reshape(so.transpose(b, (0, 2, 1)), (size * n, k))
    out = so.reshape(linalg.matmul(bt, so.transpose(a)), (size, n, a.shape[0]))
    return so.transpose(out, (0, 2, 1))


@defbatch("batch_matmul")
def _batch_matmul(args, batched, attrs, size):
    raise UnsupportedOpError("batch_matmul", "nested batching is not supported")


@defbatch("conv2d")
def _conv2d(args, batched, attrs, size):
    _unsupported_batched("conv2d", batched, allowed=[0])
    x, w = args
    return unfold(conv.conv2d_p(fold(x, True, size), w, **attrs), size)


@defbatch("conv2d_grad_input")
def _conv2d_grad_input(args, batched, attrs, size):
    _unsupported_batched("conv2d_grad_input", batched, allowed=[0])
    g, w = args
    return unfold(conv.conv2d_grad_input_p(fold(g, True, size), w, **attrs), size)


@defbatch("conv2d_grad_weight")
def _conv2d_grad_weight(args, batched, attrs, size):
    if attrs["batch_dims"]:
        raise UnsupportedOpError("conv2d_grad_weight", "nested batching is not supported")
    x, g = (expand(a, b, size) for a, b in zip(args, batched))
    return conv.conv2d_grad_weight_p(x, g, **{**attrs, "batch_dims": 1})


def _folding(kind: str, foldable: Sequence[int]):
    """Rule for ops whose leading data axis is an independent batch axis."""

    def rule(args, batched, attrs, size):
        _unsupported_batched(kind, batched, allowed=foldable)
        operands = [
            fold(a, b, size) if i in foldable else a
            for i, (a, b) in enumerate(zip(args, batched))
        ]
        return unfold(_emit(kind, *operands, **attrs), size)

    return rule


_RULES["max_pool2d"] = _folding("max_pool2d", [0])
_RULES["avg_pool2d"] = _folding("avg_pool2d", [0])
_RULES["max_pool2d_grad"] = _folding("max_pool2d_grad", [0, 1])
_RULES["avg_pool2d_grad"] = _folding("avg_pool2d_grad", [0])
_RULES["softmax_xent"] = _folding("softmax_xent", [0, 1])
_RULES["softmax_xent_grad"] = _folding("softmax_xent_grad", [0, 1, 2])
_RULES["lstm_scan"] = _folding("lstm_scan", [0])
_RULES["lstm_scan_grad"] = _folding("lstm_scan_grad", [0, 2])


@defbatch("gather_rows")
def _gather_rows(args, batched, attrs, size):
    _unsupported_batched("gather_rows", batched, allowed=[1])
    table, ids = args
    return gather_rows(table, ids)


@defbatch("scatter_add")
def _scatter_add(args, batched, attrs, size):
    if attrs["batch_dims"]:
        raise UnsupportedOpError("scatter_add", "nested batching is not supported")
    g, ids = (expand(a, b, size) for a, b in zip(args, batched))
    return scatter_add(g, ids, attrs["num_rows"], batch_dims=1)


def _shifted_axis(kind: str):
    def rule(args, batched, attrs, size):
        return _emit(kind, args[0], **{**attrs, "axis": attrs["axis"] + 1})

    return rule


for _kind in ("slice_axis", "pad_axis", "shift_right"):
    _RULES[_kind] = _shifted_axis(_kind)


@defbatch("concat")
def _concat(args, batched, attrs, size):
    return so.concat([expand(a, b, size) for a, b in zip(args, batched)], attrs["axis"] + 1)

