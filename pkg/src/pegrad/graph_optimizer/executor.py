import logging
from typing import Literal, Mapping, Optional, Union, get_args

import numpy as np

from pegrad.autodiff.interpreter import evaluate, leaf_values
from pegrad.autodiff.tape import Node, Tape
from pegrad.graph_optimizer.buffer_planner import plan_buffers
from pegrad.graph_optimizer.graph import FusionGroup, Graph
from pegrad.graph_optimizer.passes import dce, fuse_elementwise
from pegrad.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

ExecutionMode = Literal["eager", "graph"]


def optimize(tape: Tape) -> Graph:
    """Run dead-node elimination, elementwise fusion and buffer planning."""
    return plan_buffers(fuse_elementwise(dce(Graph.from_tape(tape))))


class CompiledGraph:
    """An optimized graph bound to a pool of preallocated buffers.

    Every computed value is a fixed view into its planned buffer, so a run performs
    no allocations of its own beyond temporaries inside non-elementwise kernels.
    """

    def __init__(self, graph: Graph):
        if graph.plan is None:
            graph = plan_buffers(graph)
        self.graph = graph
        plan = graph.plan
        self._pool = [np.empty(size, dtype=np.uint8) for size in plan.buffer_sizes]
        self._views: dict[int, Tensor] = {}
        for value, buffer_id in plan.assignment.items():
            spec = graph.tape.node(value).spec
            raw = self._pool[buffer_id][: spec.nbytes]
            self._views[value] = raw.view(spec.dtype).reshape(spec.shape)
        self._program: list[Node] = []
        for step in graph.steps:
            if isinstance(step, FusionGroup):
                self._program.extend(graph.tape.node(i) for i in step.nodes)
            else:
                self._program.append(step)

    @property
    def allocated_bytes(self) -> int:
        """Bytes held by the buffer pool plus the leaves it reads."""
        return sum(buf.nbytes for buf in self._pool) + self.graph.plan.leaf_bytes

    def run(
        self, inputs: Mapping[str, Tensor], params: Optional[Mapping[str, Tensor]] = None
    ) -> dict[str, Tensor]:
        tape = self.graph.tape
        env = dict(self._views)
        env.update(leaf_values(tape, inputs, params))
        for node in self._program:
            prim = node.primitive
            out = self._views[node.id]
            args = [env[i] for i in node.inputs]
            if prim.accepts_out:
                prim.impl(*args, out=out, **node.attrs)
            else:
                np.copyto(out, prim.impl(*args, **node.attrs))
        return {name: np.array(env[node_id], copy=True) for name, node_id in tape.outputs.items()}

    __call__ = run


def execute(
    program: Union[Tape, Graph],
    inputs: Mapping[str, Tensor],
    params: Optional[Mapping[str, Tensor]] = None,
    mode: ExecutionMode = "graph",
) -> dict[str, Tensor]:
    """Run a program once.

    :param mode: ``eager`` replays the tape node by node with fresh allocations;
        ``graph`` optimizes it and runs it from the planned buffer pool.
    """
    if mode not in get_args(ExecutionMode):
        raise ValueError(f"Unknown mode: {mode}. Please choose from {get_args(ExecutionMode)}")
    if mode == "eager":
        tape = program.tape if isinstance(program, Graph) else program
        return evaluate(tape, inputs, params)
    graph = program if isinstance(program, Graph) and program.plan else optimize(_as_tape(program))
    return CompiledGraph(graph).run(inputs, params)


def _as_tape(program: Union[Tape, Graph]) -> Tape:
    return program.tape if isinstance(program, Graph) else program
