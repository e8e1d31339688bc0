"""Reverse-mode differentiation as a tape-to-tape transform."""

import logging
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from pegrad.autodiff.tape import Tape, TapeBuilder, Tracer
from pegrad.autodiff.vjp_rules import Cotangent, PartialCotangent, VjpContext, vjp_rule
from pegrad.errors import ContractError
from pegrad.tensor_core import elementwise as ew
from pegrad.tensor_core import shape_ops as so
from pegrad.tensor_core.tensor import TensorSpec

logger = logging.getLogger(__name__)

GRAD_PREFIX = "grad:"
ACT_PREFIX = "act:"
COT_PREFIX = "cot:"


def grad_name(param: str) -> str:
    return f"{GRAD_PREFIX}{param}"


def grad(
    tape: Tape,
    wrt: Optional[Sequence[str]] = None,
    taps: Union[bool, Iterable[str], None] = None,
) -> Tape:
    """Append the backward program of ``tape``'s scalar loss.

    :param tape: A tape with a scalar ``loss`` output.
    :param wrt: Parameter names to differentiate; all parameters by default.
    :param taps: ``True`` for every recorded tap, or an iterable of tap names.
        Each selected tap adds ``act:<tap>`` and ``cot:<tap>`` outputs.
    :return: A new tape keeping the forward outputs and adding ``grad:<param>``.
    """
    loss = tape.loss
    if loss is None:
        raise ContractError("grad needs a tape with a 'loss' output")
    loss_spec = tape.node(loss).spec
    if loss_spec.shape != () or not loss_spec.is_real:
        raise ContractError(f"grad needs a real scalar loss, got shape {loss_spec.shape}")

    wrt = list(tape.params) if wrt is None else list(wrt)
    unknown = [name for name in wrt if name not in tape.params]
    if unknown:
        raise ValueError(f"Unknown parameters: {unknown}. Please choose from {list(tape.params)}")
    tap_names = _select_taps(tape, taps)

    builder = TapeBuilder.extend(tape, dtype=loss_spec.dtype)
    requires = _requires(tape, {tape.params[name] for name in wrt})

    pending: dict[int, list[Cotangent]] = {loss: [builder.const(np.ones((), loss_spec.dtype))]}
    totals: dict[int, Tracer] = {}
    keep_totals = {tape.taps[name].output for name in tap_names}

    for node in reversed(tape.nodes):
        parts = pending.pop(node.id, None)
        if parts is None or node.id not in requires:
            continue
        g = _accumulate(builder, parts, node.spec)
        if node.is_leaf or node.id in keep_totals:
            totals[node.id] = g
        if node.is_leaf:
            continue
        rule = vjp_rule(node.op)
        ctx = VjpContext(
            inputs=[builder.tracer(i) for i in node.inputs],
            output=builder.tracer(node.id),
            attrs=node.attrs,
            needs=[i in requires for i in node.inputs],
        )
        cotangents = rule.fn(g, ctx)
        for input_id, need, cotangent in zip(node.inputs, ctx.needs, cotangents):
            if need and cotangent is not None:
                pending.setdefault(input_id, []).append(cotangent)

    outputs: dict[str, Tracer] = {}
    for name in wrt:
        node_id = tape.params[name]
        if node_id in totals:
            outputs[grad_name(name)] = totals[node_id]
        else:
            logger.warning(f"Parameter {name} does not reach the loss; its gradient is zero")
            outputs[grad_name(name)] = builder.zeros(tape.node(node_id).spec)
    for name in tap_names:
        tap = tape.taps[name]
        outputs[f"{ACT_PREFIX}{name}"] = builder.tracer(tap.activation)
        cot = totals.get(tap.output)
        outputs[f"{COT_PREFIX}{name}"] = (
            cot if cot is not None else builder.zeros(tape.node(tap.output).spec)
        )
    backward = builder.finish(outputs)
    logger.debug(f"Backward program adds {len(backward) - len(tape)} nodes for {len(wrt)} parameters")
    return backward


def _select_taps(tape: Tape, taps) -> list[str]:
    if not taps:
        return []
    if taps is True:
        return list(tape.taps)
    names = list(taps)
    unknown = [name for name in names if name not in tape.taps]
    if unknown:
        raise ValueError(f"Unknown taps: {unknown}. Please choose from {list(tape.taps)}")
    return names


def _requires(tape: Tape, sources: set[int]) -> set[int]:
    """Nodes with a real-valued dependency on one of ``sources``."""
    requires = set(sources)
    for node in tape.nodes:
        if node.spec.is_real and any(i in requires for i in node.inputs):
            requires.add(node.id)
    return requires


def _accumulate(builder: TapeBuilder, parts: list[Cotangent], spec: TensorSpec) -> Tracer:
    dense = [p for p in parts if isinstance(p, Tracer)]
    by_axis: dict[int, list[PartialCotangent]] = {}
    for part in parts:
        if isinstance(part, PartialCotangent):
            by_axis.setdefault(part.axis, []).append(part)
    for axis, pieces in by_axis.items():
        dense.append(_assemble(builder, axis, pieces, spec))
    total = dense[0]
    for part in dense[1:]:
        total = ew.add(total, part)
    return total


def _assemble(
    builder: TapeBuilder, axis: int, pieces: list[PartialCotangent], spec: TensorSpec
) -> Tracer:
    """Place slice cotangents into the full extent of ``axis``.

    Disjoint slices become one concat with zero gaps; overlapping ones are padded
    and summed.
    """
    pieces = sorted(pieces, key=lambda p: p.start)
    extent = spec.shape[axis]
    disjoint = all(a.stop <= b.start for a, b in zip(pieces, pieces[1:]))
    if not disjoint:
        padded = [so.pad_axis(p.value, axis, p.start, extent) for p in pieces]
        total = padded[0]
        for p in padded[1:]:
            total = ew.add(total, p)
        return total
    if len(pieces) == 1 and pieces[0].start == 0 and pieces[0].stop == extent:
        return pieces[0].value

    def gap(width: int) -> Tracer:
        shape = list(spec.shape)
        shape[axis] = width
        return builder.zeros(TensorSpec(tuple(shape), spec.dtype))

    segments = []
    cursor = 0
    for piece in pieces:
        if piece.start > cursor:
            segments.append(gap(piece.start - cursor))
        segments.append(piece.value)
        cursor = piece.stop
    if cursor < extent:
        segments.append(gap(extent - cursor))
    if len(segments) == 1:
        return segments[0]
    return so.concat(segments, axis)
