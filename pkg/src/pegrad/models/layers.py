"""Layers of the benchmark architectures, applied through tensor-core primitives.

A layer owns its parameter shapes (named ``<layer>.<param>``) and applies itself to
arrays or traced values alike. When asked, parametrized layers register a tap on the
recording so Jacobian-based strategies can find their input and pre-activation
output.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from pegrad.autodiff.tape import Tracer
from pegrad.models.lstm import lstm_sequence
from pegrad.tensor_core import conv, elementwise as ew, linalg
from pegrad.tensor_core import shape_ops as so
from pegrad.tensor_core.embedding import gather_rows
from pegrad.tensor_core.reduction import reduce_mean

Params = Mapping[str, object]


def _tap(name: str, kind: str, activation, output, taps: bool, **attrs) -> None:
    if taps and isinstance(output, Tracer):
        output.builder.tap(name, kind, activation, output, **attrs)


class Layer(ABC):
    kind: str = "layer"

    def __init__(self, name: str):
        self.name = name

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def fan_in(self) -> int:
        """Number of inputs feeding each output unit, used to scale initialization."""
        return 1

    def is_bias(self, param: str) -> bool:
        return param == f"{self.name}.b"

    def p(self, params: Params, short: str):
        return params[f"{self.name}.{short}"]

    @abstractmethod
    def apply(self, params: Params, x, taps: bool = False):
        pass

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, in_features: int, out_features: int):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features

    def param_shapes(self):
        return {
            f"{self.name}.W": (self.in_features, self.out_features),
            f"{self.name}.b": (self.out_features,),
        }

    def fan_in(self) -> int:
        return self.in_features

    def apply(self, params, x, taps=False):
        out = ew.add(linalg.matmul(x, self.p(params, "W")), self.p(params, "b"))
        _tap(self.name, self.kind, x, out, taps)
        return out


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(
        self, name: str, in_channels: int, out_channels: int, kernel: int, stride: int = 1, pad: int = 0
    ):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad

    def param_shapes(self):
        return {
            f"{self.name}.W": (self.out_channels, self.in_channels, self.kernel, self.kernel),
            f"{self.name}.b": (self.out_channels,),
        }

    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel

    def apply(self, params, x, taps=False):
        out = conv.conv2d(x, self.p(params, "W"), self.stride, self.pad)
        out = ew.add(out, so.reshape(self.p(params, "b"), (self.out_channels, 1, 1)))
        _tap(
            self.name,
            self.kind,
            x,
            out,
            taps,
            kernel=(self.kernel, self.kernel),
            stride=self.stride,
            pad=self.pad,
        )
        return out


class MaxPool2d(Layer):
    kind = "max_pool2d"

    def __init__(self, name: str, k: int, stride: int):
        super().__init__(name)
        self.k = k
        self.stride = stride

    def apply(self, params, x, taps=False):
        return conv.pool2d("max", x, self.k, self.stride)


class AvgPool2d(MaxPool2d):
    kind = "avg_pool2d"

    def apply(self, params, x, taps=False):
        return conv.pool2d("avg", x, self.k, self.stride)


class GlobalAvgPool2d(Layer):
    kind = "global_avg_pool2d"

    def apply(self, params, x, taps=False):
        return conv.global_avg_pool2d(x)


class Flatten(Layer):
    kind = "flatten"

    def apply(self, params, x, taps=False):
        return so.reshape(x, (x.shape[0], -1))


class Relu(Layer):
    kind = "relu"

    def apply(self, params, x, taps=False):
        return ew.relu(x)


class Embedding(Layer):
    kind = "embedding"

    def __init__(self, name: str, vocab_size: int, dim: int):
        super().__init__(name)
        self.vocab_size = vocab_size
        self.dim = dim

    def param_shapes(self):
        return {f"{self.name}.E": (self.vocab_size, self.dim)}

    def fan_in(self) -> int:
        return self.dim

    def apply(self, params, x, taps=False):
        out = gather_rows(self.p(params, "E"), x)
        _tap(self.name, self.kind, x, out, taps, num_rows=self.vocab_size)
        return out


class SequenceMean(Layer):
    """1-D average pool over the whole sequence axis of ``[N, L, E]``."""

    kind = "sequence_mean"

    def apply(self, params, x, taps=False):
        return reduce_mean(x, axes=1)


class Lstm(Layer):
    """LSTM over ``[N, L, E]`` returning every hidden state ``[N, L, H]``.

    :param unroll: Record one cell per time step instead of a single scan op.
    """

    kind = "lstm"

    def __init__(self, name: str, input_size: int, hidden_size: int, unroll: bool = False):
        super().__init__(name)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.unroll = unroll

    def param_shapes(self):
        gates = 4 * self.hidden_size
        return {
            f"{self.name}.W": (self.input_size, gates),
            f"{self.name}.U": (self.hidden_size, gates),
            f"{self.name}.b": (gates,),
        }

    def fan_in(self) -> int:
        return self.hidden_size

    def apply(self, params, x, taps=False):
        return lstm_sequence(
            x, self.p(params, "W"), self.p(params, "U"), self.p(params, "b"), unroll=self.unroll
        )


@dataclass(frozen=True)
class LayerShape:
    name: str
    kind: str
    shape: tuple[int, ...]


def init_bound(layer: Layer, param: str) -> Optional[float]:
    """Half-width of the uniform initializer, or ``None`` for zero-initialized biases."""
    if layer.is_bias(param):
        return None
    return 1.0 / np.sqrt(layer.fan_in())
