import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping, Optional, Union

import numpy as np

from pegrad.errors import ShapeError, TraceError
from pegrad.tensor_core.primitive import Primitive, Traced, get_primitive
from pegrad.tensor_core.tensor import Tensor, TensorSpec

logger = logging.getLogger(__name__)

LEAF_OPS = frozenset({"param", "input", "const"})

LeafDescription = Union[Tensor, TensorSpec]


@dataclass(frozen=True)
class Node:
    """One recorded primitive application (or a leaf).

    :param id: Unique id within the tape; inputs always have smaller positions.
    :param op: Primitive name, or one of ``param``, ``input``, ``const``.
    :param inputs: Ids of the operand nodes, in operand order.
    :param spec: Output shape and element type.
    :param attrs: Static attributes passed to the primitive.
    :param name: Leaf name for ``param`` and ``input`` nodes.
    """

    id: int
    op: str
    inputs: tuple[int, ...]
    spec: TensorSpec
    attrs: Mapping[str, Any] = field(default_factory=dict)
    name: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return self.op in LEAF_OPS

    @property
    def primitive(self) -> Primitive:
        return get_primitive(self.op)


@dataclass(frozen=True)
class Tap:
    """Layer boundary exposed to Jacobian-based strategies."""

    kind: str
    activation: int
    output: int
    attrs: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Tape:
    """An immutable, topologically ordered program of primitive applications."""

    nodes: tuple[Node, ...]
    constants: Mapping[int, Tensor]
    params: Mapping[str, int]
    inputs: Mapping[str, int]
    outputs: Mapping[str, int]
    taps: Mapping[str, Tap] = field(default_factory=dict)

    @cached_property
    def _index(self) -> dict[int, Node]:
        return {node.id: node for node in self.nodes}

    def node(self, node_id: int) -> Node:
        return self._index[node_id]

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def loss(self) -> Optional[int]:
        return self.outputs.get("loss")

    @property
    def num_ops(self) -> int:
        return sum(1 for node in self.nodes if not node.is_leaf)

    def consumers(self) -> dict[int, list[int]]:
        users: dict[int, list[int]] = {node.id: [] for node in self.nodes}
        for node in self.nodes:
            for i in node.inputs:
                users[i].append(node.id)
        return users

    def leaf_specs(self) -> dict[str, TensorSpec]:
        leaves = {**self.params, **self.inputs}
        return {name: self.node(i).spec for name, i in leaves.items()}

    def with_outputs(self, outputs: Mapping[str, int]) -> "Tape":
        return Tape(self.nodes, self.constants, self.params, self.inputs, dict(outputs), self.taps)


class Tracer(Traced):
    __slots__ = ("builder", "node_id", "spec")

    def __init__(self, builder: "TapeBuilder", node_id: int, spec: TensorSpec):
        self.builder = builder
        self.node_id = node_id
        self.spec = spec

    def __repr__(self) -> str:
        return f"Tracer(node={self.node_id}, shape={self.shape}, dtype={self.dtype})"

    def __bool__(self):
        raise TraceError("traced values have no truth value; programs must not branch on data")

    def __array__(self, *args, **kwargs):
        raise TraceError("traced values cannot be converted to arrays while recording")


class TapeBuilder:
    """Single-owner recorder that appends nodes and hands out tracers."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.constants: dict[int, Tensor] = {}
        self.params: dict[str, int] = {}
        self.inputs: dict[str, int] = {}
        self.outputs: dict[str, int] = {}
        self.taps: dict[str, Tap] = {}
        self._next_id = 0
        self._specs: dict[int, TensorSpec] = {}
        self._scalars: dict[tuple, int] = {}

    @classmethod
    def extend(cls, tape: Tape, dtype=None) -> "TapeBuilder":
        """Start a builder that continues recording after ``tape``'s nodes."""
        if dtype is None:
            real = [n.spec.dtype for n in tape.nodes if n.spec.is_real]
            dtype = real[0] if real else np.float64
        builder = cls(dtype)
        builder.nodes = list(tape.nodes)
        builder.constants = dict(tape.constants)
        builder.params = dict(tape.params)
        builder.inputs = dict(tape.inputs)
        builder.outputs = dict(tape.outputs)
        builder.taps = dict(tape.taps)
        builder._specs = {n.id: n.spec for n in tape.nodes}
        builder._next_id = max((n.id for n in tape.nodes), default=-1) + 1
        return builder

    def tracer(self, node_id: int, spec: Optional[TensorSpec] = None) -> Tracer:
        return Tracer(self, node_id, spec or self._specs[node_id])

    def _append(
        self,
        op: str,
        inputs: tuple[int, ...],
        spec: TensorSpec,
        attrs: Optional[Mapping[str, Any]] = None,
        name: Optional[str] = None,
    ) -> Tracer:
        node = Node(self._next_id, op, inputs, spec, dict(attrs or {}), name)
        self._next_id += 1
        self._specs[node.id] = spec
        self.nodes.append(node)
        return Tracer(self, node.id, spec)

    def param(self, name: str, spec: TensorSpec) -> Tracer:
        if name in self.params or name in self.inputs:
            raise TraceError(f"leaf {name} declared twice")
        tracer = self._append("param", (), spec, name=name)
        self.params[name] = tracer.node_id
        return tracer

    def input(self, name: str, spec: TensorSpec) -> Tracer:
        if name in self.params or name in self.inputs:
            raise TraceError(f"leaf {name} declared twice")
        tracer = self._append("input", (), spec, name=name)
        self.inputs[name] = tracer.node_id
        return tracer

    def const(self, value) -> Tracer:
        value = np.ascontiguousarray(value)
        key = None
        if value.ndim == 0:
            key = (value.dtype.str, value.tobytes())
            if key in self._scalars:
                node_id = self._scalars[key]
                return Tracer(self, node_id, TensorSpec((), value.dtype))
        tracer = self._append("const", (), TensorSpec.of(value))
        self.constants[tracer.node_id] = value
        if key is not None:
            self._scalars[key] = tracer.node_id
        return tracer

    def zeros(self, spec: TensorSpec) -> Tracer:
        return self.const(np.zeros(spec.shape, dtype=spec.dtype))

    def lift(self, value) -> Tracer:
        if isinstance(value, Tracer):
            if value.builder is not self:
                raise TraceError("value belongs to a different recording")
            return value
        if isinstance(value, np.ndarray):
            return self.const(value)
        raise TraceError(f"cannot record operand of type {type(value).__name__}")

    def emit(self, prim: Primitive, operands, attrs: Mapping[str, Any]) -> Tracer:
        tracers = [self.lift(o) for o in operands]
        spec = prim.abstract_eval(*(t.spec for t in tracers), **attrs)
        return self._append(prim.name, tuple(t.node_id for t in tracers), spec, attrs)

    def tap(self, name: str, kind: str, activation: Tracer, output: Tracer, **attrs) -> None:
        if name in self.taps:
            raise TraceError(f"tap {name} recorded twice")
        self.taps[name] = Tap(kind, activation.node_id, output.node_id, attrs)

    def finish(self, outputs: Optional[Mapping[str, Tracer]] = None) -> Tape:
        for name, tracer in (outputs or {}).items():
            self.outputs[name] = self.lift(tracer).node_id
        return Tape(
            tuple(self.nodes),
            dict(self.constants),
            dict(self.params),
            dict(self.inputs),
            dict(self.outputs),
            dict(self.taps),
        )


def _describe(value: LeafDescription, dtype: np.dtype) -> TensorSpec:
    if isinstance(value, TensorSpec):
        return value
    value = np.asarray(value)
    if value.dtype.kind == "f":
        return TensorSpec(value.shape, dtype)
    return TensorSpec(value.shape, value.dtype)


def record(
    f: Callable[..., Any],
    params: Mapping[str, LeafDescription],
    inputs: Mapping[str, LeafDescription],
    dtype=None,
) -> Tape:
    """Trace ``f(params, inputs)`` into a tape.

    :param f: Program built only from tensor-core primitives. It receives two dicts
        of tracers and returns a scalar loss, a single tensor, or a dict of named
        outputs.
    :param params: Parameter leaves, as arrays or ``TensorSpec``s.
    :param inputs: Input leaves, as arrays or ``TensorSpec``s.
    :param dtype: Element type for real leaves given as arrays; defaults to float64.
    :return: The recorded tape. A scalar return value is named ``loss``.
    """
    builder = TapeBuilder(dtype or np.float64)
    param_tracers = {name: builder.param(name, _describe(v, builder.dtype)) for name, v in params.items()}
    input_tracers = {name: builder.input(name, _describe(v, builder.dtype)) for name, v in inputs.items()}
    result = f(param_tracers, input_tracers)
    if isinstance(result, Mapping):
        outputs = dict(result)
    elif isinstance(result, (tuple, list)):
        outputs = {f"output{i}": r for i, r in enumerate(result)}
    else:
        outputs = {"loss" if _is_scalar(result) else "output": result}
    for name, value in outputs.items():
        if not isinstance(value, Tracer):
            raise TraceError(
                f"output {name} is a {type(value).__name__}; programs must return traced tensors"
            )
    tape = builder.finish(outputs)
    logger.debug(f"Recorded {tape.num_ops} ops over {len(tape.nodes)} nodes")
    return tape


def _is_scalar(value) -> bool:
    return isinstance(value, Tracer) and value.shape == ()


def check_feed(node: Node, value) -> Tensor:
    """Validate one leaf value against its recorded spec."""
    array = np.asarray(value)
    if tuple(array.shape) != node.spec.shape:
        raise ShapeError(f"leaf {node.name}: expected shape {node.spec.shape}, got {array.shape}")
    if array.dtype != node.spec.dtype:
        if array.dtype.kind != node.spec.dtype.kind and not (
            array.dtype.kind in "iu" and node.spec.dtype.kind in "iu"
        ):
            raise ShapeError(
                f"leaf {node.name}: expected element type {node.spec.dtype}, got {array.dtype}"
            )
        array = array.astype(node.spec.dtype)
    return np.ascontiguousarray(array)
