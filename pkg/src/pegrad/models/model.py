import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pegrad.autodiff.tape import Tape, TapeBuilder, record
from pegrad.models.layers import Layer, LayerShape, Params, init_bound
from pegrad.tensor_core import shape_ops as so
from pegrad.tensor_core.losses import softmax_xent
from pegrad.tensor_core.reduction import reduce_sum
from pegrad.tensor_core.rng import RngState, uniform
from pegrad.tensor_core.tensor import INDEX_DTYPE, Tensor, TensorSpec

logger = logging.getLogger(__name__)


@dataclass
class Model:
    """A sequential classifier.

    :param kind: Builder identifier (``logreg``, ``fcnn``, ...).
    :param layers: Layers applied in order.
    :param example_shape: Shape of one input example.
    :param num_classes: Label range; a single logit column means binary labels.
    :param token_input: Inputs are integer token ids rather than reals.
    :param params: Initial parameter values keyed ``<layer>.<param>``.
    """

    kind: str
    layers: list[Layer]
    example_shape: tuple[int, ...]
    num_classes: int
    dtype: np.dtype = np.dtype(np.float64)
    token_input: bool = False
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_specs(self) -> dict[str, TensorSpec]:
        specs = {}
        for layer in self.layers:
            for name, shape in layer.param_shapes().items():
                specs[name] = TensorSpec(shape, self.dtype)
        return specs

    @property
    def num_parameters(self) -> int:
        return sum(spec.size for spec in self.param_specs().values())

    @property
    def parameter_bytes(self) -> int:
        return sum(spec.nbytes for spec in self.param_specs().values())

    @property
    def signature(self) -> tuple:
        """Everything that changes the recorded program, usable as a cache key."""
        layers = tuple((layer.name, layer.kind, getattr(layer, "unroll", None)) for layer in self.layers)
        return (self.kind, self.example_shape, self.dtype.str, layers)

    @property
    def layer_kinds(self) -> set[str]:
        return {layer.kind for layer in self.layers}

    def parametrized_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.param_shapes()]

    def init(self, rng: RngState) -> dict[str, Tensor]:
        """Fan-in scaled uniform weights and zero biases, drawn in layer order."""
        params = {}
        for layer in self.layers:
            for name, shape in layer.param_shapes().items():
                bound = init_bound(layer, name)
                if bound is None:
                    params[name] = np.zeros(shape, dtype=self.dtype)
                else:
                    params[name] = uniform(shape, rng, -bound, bound, dtype=self.dtype)
        return params

    def input_spec(self, batch_size: int) -> TensorSpec:
        dtype = INDEX_DTYPE if self.token_input else self.dtype
        return TensorSpec((batch_size,) + self.example_shape, dtype)

    def label_spec(self, batch_size: int) -> TensorSpec:
        return TensorSpec((batch_size,), INDEX_DTYPE)

    def forward(self, params: Params, x, taps: bool = False):
        for layer in self.layers:
            x = layer.apply(params, x, taps)
        return x

    def per_example_loss(self, params: Params, x, y, taps: bool = False):
        return softmax_xent(self.forward(params, x, taps), y)

    def loss(self, params: Params, x, y, taps: bool = False):
        """Summed cross-entropy over the batch."""
        return reduce_sum(self.per_example_loss(params, x, y, taps))

    def loss_tape(self, batch_size: int, taps: bool = False) -> Tape:
        """Record the summed loss of a batch as a tape with inputs ``x`` and ``y``."""
        return record(
            lambda p, i: self.loss(p, i["x"], i["y"], taps),
            self.param_specs(),
            {"x": self.input_spec(batch_size), "y": self.label_spec(batch_size)},
            dtype=self.dtype,
        )

    def example_loss_tape(self) -> Tape:
        """Record the loss of a single example, ``x`` without a batch axis and ``y`` a scalar."""

        def program(p, i):
            x = so.reshape(i["x"], (1,) + self.example_shape)
            y = so.reshape(i["y"], (1,))
            return self.loss(p, x, y)

        return record(
            program,
            self.param_specs(),
            {"x": TensorSpec(self.example_shape, self.input_spec(1).dtype), "y": TensorSpec((), INDEX_DTYPE)},
            dtype=self.dtype,
        )

    def layer_shapes(self, batch_size: int) -> list[LayerShape]:
        """Output shape of every layer, inferred by tracing one forward pass."""
        builder = TapeBuilder(self.dtype)
        params = {name: builder.param(name, spec) for name, spec in self.param_specs().items()}
        x = builder.input("x", self.input_spec(batch_size))
        shapes = []
        for layer in self.layers:
            x = layer.apply(params, x)
            shapes.append(LayerShape(layer.name, layer.kind, x.shape))
        return shapes

    def with_dtype(self, dtype) -> "Model":
        dtype = np.dtype(dtype)
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Model(
            self.kind, self.layers, self.example_shape, self.num_classes, dtype, self.token_input, params
        )

    def layer(self, name: str) -> Optional[Layer]:
        return next((layer for layer in self.layers if layer.name == name), None)
