import logging
from typing import Any, Callable, Mapping, Optional

import numpy as np

from pegrad.autodiff.grad import grad, grad_name
from pegrad.autodiff.interpreter import evaluate
from pegrad.autodiff.tape import Tape, TapeBuilder, Tracer, record
from pegrad.errors import ShapeError
from pegrad.tensor_core.tensor import Tensor, TensorSpec
from pegrad.vmap.batching_rules import batching_rule, expand

logger = logging.getLogger(__name__)

InAxes = Mapping[str, Optional[int]]


def _check_axis(name: str, axis: Optional[int]) -> None:
    if axis not in (0, None):
        raise ValueError(f"Unknown batch axis for {name}: {axis}. Please choose from (0, None)")


def batch_tape(tape: Tape, in_axes: InAxes, axis_size: int) -> Tape:
    """Rewrite a per-example tape into one that processes ``axis_size`` examples.

    :param in_axes: Leaf name to ``0`` (batched on the leading axis) or ``None``.
        Leaves not named are unbatched.
    :return: A tape whose batched leaves and outputs carry a leading axis of
        ``axis_size``. Its node count does not depend on ``axis_size``.
    """
    for name, axis in in_axes.items():
        _check_axis(name, axis)
        if name not in tape.params and name not in tape.inputs:
            raise ValueError(f"Unknown leaf: {name}. Please choose from {list(tape.leaf_specs())}")
    if axis_size < 1:
        raise ShapeError(f"batch size must be positive, got {axis_size}")

    source_dtype = next((n.spec.dtype for n in tape.nodes if n.spec.is_real), np.float64)
    builder = TapeBuilder(source_dtype)
    env: dict[int, Tracer] = {}
    batched: set[int] = set()

    for node in tape.nodes:
        if node.op in ("param", "input"):
            is_batched = in_axes.get(node.name) == 0
            spec = node.spec
            if is_batched:
                spec = TensorSpec((axis_size,) + spec.shape, spec.dtype)
            declare = builder.param if node.op == "param" else builder.input
            env[node.id] = declare(node.name, spec)
            if is_batched:
                batched.add(node.id)
        elif node.op == "const":
            env[node.id] = builder.const(tape.constants[node.id])
        else:
            args = [env[i] for i in node.inputs]
            flags = [i in batched for i in node.inputs]
            if any(flags):
                env[node.id] = batching_rule(node.op)(args, flags, node.attrs, axis_size)
                batched.add(node.id)
            else:
                env[node.id] = builder.emit(node.primitive, args, node.attrs)

    for name, tap in tape.taps.items():
        builder.tap(name, tap.kind, env[tap.activation], env[tap.output], **tap.attrs)
    outputs = {
        name: expand(env[node_id], node_id in batched, axis_size)
        for name, node_id in tape.outputs.items()
    }
    result = builder.finish(outputs)
    logger.debug(f"Batched {tape.num_ops} ops into {result.num_ops} ops for size {axis_size}")
    return result


def _batch_size(inputs: Mapping[str, Tensor], in_axes: InAxes) -> int:
    sizes = {name: np.shape(inputs[name])[0] for name, axis in in_axes.items() if axis == 0}
    if not sizes:
        raise ShapeError("vmap needs at least one batched input")
    if len(set(sizes.values())) > 1:
        raise ShapeError(f"inconsistent batch sizes: {sizes}")
    return next(iter(sizes.values()))


def vmap(f: Callable[[Mapping[str, Any], Mapping[str, Any]], Any], in_axes: InAxes):
    """Vectorize a per-example program over a leading batch axis.

    ``f`` has the signature used by :func:`pegrad.autodiff.record`. The returned
    callable takes ``(params, inputs)``, traces ``f`` on single-example specs, batches
    the tape and evaluates it. A program returning a single value gives back the
    batched array; otherwise a dict of batched outputs.
    """
    for name, axis in in_axes.items():
        _check_axis(name, axis)

    def batched(params: Mapping[str, Tensor], inputs: Mapping[str, Tensor]):
        leaves = {**params, **inputs}
        size = _batch_size(leaves, in_axes)

        def describe(name, value):
            value = np.asarray(value)
            return value[0] if in_axes.get(name) == 0 else value

        tape = record(
            f,
            {k: describe(k, v) for k, v in params.items()},
            {k: describe(k, v) for k, v in inputs.items()},
            dtype=_real_dtype(leaves),
        )
        outputs = evaluate(batch_tape(tape, in_axes, size), inputs, params)
        if set(outputs) in ({"loss"}, {"output"}):
            return next(iter(outputs.values()))
        return outputs

    return batched


def _real_dtype(leaves: Mapping[str, Tensor]):
    for value in leaves.values():
        value = np.asarray(value)
        if value.dtype.kind == "f":
            return value.dtype
    return np.float64


def batched_per_example_grads(model, params: Mapping[str, Tensor], x: Tensor, y: Tensor):
    """Per-example gradients of ``model`` by batching its single-example gradient program.

    :return: :class:`pegrad.strategies.PerExampleGrads` with a leading axis of ``len(x)``.
    """
    # strategies builds on this module
    from pegrad.strategies.base import PerExampleGrads

    tape = batch_tape(grad(model.example_loss_tape()), {"x": 0, "y": 0}, len(x))
    outputs = evaluate(tape, {"x": x, "y": y}, params)
    return PerExampleGrads({name: outputs[grad_name(name)] for name in model.param_specs()})
