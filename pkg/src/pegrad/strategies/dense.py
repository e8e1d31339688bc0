"""Strategies built on one backward sweep that exposes each layer's input and
output cotangent for the whole batch."""

import numpy as np

from pegrad.autodiff.grad import ACT_PREFIX, COT_PREFIX
from pegrad.models.layers import Layer
from pegrad.models.model import Model
from pegrad.strategies.base import PerExampleGrads, Strategy
from pegrad.strategies.programs import grads_from, tapped_grad_tape, weighted_grad_tape
from pegrad.tensor_core.tensor import Tensor

LayerTaps = dict[str, tuple[Tensor, Tensor]]


class TapStrategy(Strategy):
    """Per-example gradients assembled layer by layer from tapped activations."""

    def layer_taps(self, model: Model, params, x, y) -> LayerTaps:
        """Input and output cotangent of every parametrized layer, batch-major."""
        batch_size = len(x)
        outputs = self.engine.run(
            (self.name, model.signature, batch_size),
            lambda: tapped_grad_tape(model, batch_size),
            {"x": x, "y": y},
            params,
        )
        return {
            layer.name: (outputs[f"{ACT_PREFIX}{layer.name}"], outputs[f"{COT_PREFIX}{layer.name}"])
            for layer in model.parametrized_layers()
        }

    def _compute(self, model: Model, params, x, y) -> PerExampleGrads:
        return self.assemble(model, self.layer_taps(model, params, x, y))

    def assemble(self, model: Model, taps: LayerTaps) -> PerExampleGrads:
        grads = {}
        for layer in model.parametrized_layers():
            act, cot = taps[layer.name]
            grads.update(self.layer_grads(layer, act, cot))
        return PerExampleGrads(grads)

    def layer_grads(self, layer: Layer, act: Tensor, cot: Tensor) -> dict[str, Tensor]:
        if layer.kind == "dense":
            return dense_grads(layer, act, cot)
        raise NotImplementedError(f"{self.name} has no rule for {layer.kind} layers")

    def footprint_bytes(self, model: Model, batch_size: int) -> int:
        sweep = self.engine.peak_bytes(lambda: tapped_grad_tape(model, batch_size))
        return sweep + batch_size * model.parameter_bytes


def dense_grads(layer: Layer, act: Tensor, cot: Tensor) -> dict[str, Tensor]:
    """Weight gradient of example ``b`` is the outer product ``act[b] x cot[b]``."""
    return {
        f"{layer.name}.W": np.einsum("bk,bn->bkn", act, cot),
        f"{layer.name}.b": cot.copy(),
    }


class OuterProductDense(TapStrategy):
    name = "outer"
    supported_kinds = frozenset({"dense"})


class DenseNorms(TapStrategy):
    """Per-example gradient norms of dense networks without forming any gradient.

    For a dense layer ``||dW_b||^2 = ||cot_b||^2 * ||act_b||^2`` and the bias adds
    ``||cot_b||^2``. The clipped batch gradient is then a second, weighted backward
    pass (:meth:`weighted_gradient`).
    """

    name = "norms"
    supported_kinds = frozenset({"dense"})
    norms_only = True

    def assemble(self, model: Model, taps: LayerTaps) -> PerExampleGrads:
        sq_norms = None
        for layer in model.parametrized_layers():
            act, cot = taps[layer.name]
            act = act.astype(np.float64)
            cot = cot.astype(np.float64)
            contribution = np.einsum("bn,bn->b", cot, cot) * (np.einsum("bk,bk->b", act, act) + 1.0)
            sq_norms = contribution if sq_norms is None else sq_norms + contribution
        return PerExampleGrads(norms_only=True, sq_norms=sq_norms)

    def weighted_gradient(self, model: Model, params, x, y, weights) -> dict[str, Tensor]:
        """``sum_b weights[b] * g_b`` for every parameter, from one backward pass."""
        batch_size = len(x)
        outputs = self.engine.run(
            ("weighted", model.signature, batch_size),
            lambda: weighted_grad_tape(model, batch_size),
            {"x": x, "y": y, "w": np.asarray(weights, dtype=model.dtype)},
            params,
        )
        return grads_from(outputs, model.param_specs())

    def footprint_bytes(self, model: Model, batch_size: int) -> int:
        sweep = self.engine.peak_bytes(lambda: tapped_grad_tape(model, batch_size))
        weighted = self.engine.peak_bytes(lambda: weighted_grad_tape(model, batch_size))
        return max(sweep, weighted) + batch_size * np.dtype(np.float64).itemsize
