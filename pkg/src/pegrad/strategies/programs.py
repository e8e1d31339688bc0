"""Programs the strategies run, and the engine that runs them in eager or graph mode."""

import logging
import time
from typing import Callable, Hashable, Literal, Mapping, Optional, get_args

from pegrad.autodiff.grad import ACT_PREFIX, COT_PREFIX, GRAD_PREFIX, grad
from pegrad.autodiff.interpreter import evaluate
from pegrad.autodiff.tape import Tape, record
from pegrad.graph_optimizer.executor import CompiledGraph, optimize
from pegrad.graph_optimizer.graph import OptimizerReport
from pegrad.models.model import Model
from pegrad.tensor_core import elementwise as ew
from pegrad.tensor_core.reduction import reduce_sum
from pegrad.tensor_core.tensor import Tensor, TensorSpec
from pegrad.vmap.vmap import batch_tape

logger = logging.getLogger(__name__)

ExecutionMode = Literal["eager", "graph"]

TapeFactory = Callable[[], Tape]


def batch_grad_tape(model: Model, batch_size: int) -> Tape:
    """Gradient of the summed loss over a batch."""
    return grad(model.loss_tape(batch_size))


def vmapped_grad_tape(model: Model, batch_size: int) -> Tape:
    """Per-example gradients by batching the single-example gradient program."""
    return batch_tape(grad(model.example_loss_tape()), {"x": 0, "y": 0}, batch_size)


def tapped_grad_tape(model: Model, batch_size: int) -> Tape:
    """Layer inputs and output cotangents of every parametrized layer.

    Parameter gradients are not outputs, so dead-node elimination strips their
    reductions over the batch.
    """
    backward = grad(model.loss_tape(batch_size, taps=True), taps=True)
    outputs = {
        name: node_id
        for name, node_id in backward.outputs.items()
        if name == "loss" or name.startswith((ACT_PREFIX, COT_PREFIX))
    }
    return backward.with_outputs(outputs)


def weighted_grad_tape(model: Model, batch_size: int) -> Tape:
    """Gradient of ``sum_i w_i * loss_i`` for per-example weights ``w``."""
    loss = record(
        lambda p, i: reduce_sum(ew.mul(model.per_example_loss(p, i["x"], i["y"]), i["w"])),
        model.param_specs(),
        {
            "x": model.input_spec(batch_size),
            "y": model.label_spec(batch_size),
            "w": TensorSpec((batch_size,), model.dtype),
        },
        dtype=model.dtype,
    )
    return grad(loss)


class Engine:
    """Runs recorded programs.

    In graph mode each program is traced, optimized and compiled once per key and
    the time spent is accumulated in ``compile_seconds``. In eager mode the program is
    re-recorded and interpreted node by node on every call.
    """

    def __init__(self, mode: ExecutionMode = "graph"):
        if mode not in get_args(ExecutionMode):
            raise ValueError(f"Unknown mode: {mode}. Please choose from {get_args(ExecutionMode)}")
        self.mode = mode
        self.compile_seconds = 0.0
        self._compiled: dict[Hashable, CompiledGraph] = {}
        self.reports: dict[Hashable, OptimizerReport] = {}

    def run(
        self,
        key: Hashable,
        factory: TapeFactory,
        inputs: Mapping[str, Tensor],
        params: Optional[Mapping[str, Tensor]] = None,
    ) -> dict[str, Tensor]:
        if self.mode == "eager":
            return evaluate(factory(), inputs, params)
        return self.compiled(key, factory).run(inputs, params)

    def compiled(self, key: Hashable, factory: TapeFactory) -> CompiledGraph:
        program = self._compiled.get(key)
        if program is None:
            start = time.perf_counter()
            graph = optimize(factory())
            program = CompiledGraph(graph)
            elapsed = time.perf_counter() - start
            self.compile_seconds += elapsed
            self._compiled[key] = program
            self.reports[key] = graph.report
            logger.info(f"Compiled {key[0] if isinstance(key, tuple) else key} in {elapsed:.3f}s")
        return program

    def peak_bytes(self, factory: TapeFactory) -> int:
        """Accounted bytes of one run: the buffer plan in graph mode, every
        intermediate held separately in eager mode."""
        report = optimize(factory()).report
        return report.peak_bytes if self.mode == "graph" else report.no_reuse_bytes

    def clear(self) -> None:
        self._compiled.clear()
        self.reports.clear()


def grads_from(outputs: Mapping[str, Tensor], names) -> dict[str, Tensor]:
    return {name: outputs[f"{GRAD_PREFIX}{name}"] for name in names}
