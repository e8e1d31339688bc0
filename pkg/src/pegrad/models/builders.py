"""Builders for the six benchmark architectures."""

import logging
from typing import Callable, Literal, Optional, get_args

import numpy as np

from pegrad.models.layers import (
    AvgPool2d,
    Conv2d,
    Dense,
    Embedding,
    Flatten,
    GlobalAvgPool2d,
    Layer,
    Lstm,
    MaxPool2d,
    Relu,
    SequenceMean,
)
from pegrad.models.model import Model
from pegrad.tensor_core.rng import RngState

logger = logging.getLogger(__name__)

ModelKind = Literal["logreg", "fcnn", "mnist_cnn", "cifar_cnn", "embed", "lstm"]

ADULT_FEATURES = 104
VOCAB_SIZE = 10_004
SEQ_LEN = 256

# parameter counts derived from the architecture tables at the default sequence length
EXPECTED_PARAMETERS = {
    "logreg": 105,
    "fcnn": 5_760,
    "mnist_cnn": 62_906,
    "cifar_cnn": 605_226,
    "embed": 160_098,
    "lstm": 1_081_002,
}


def _logreg(seq_len: int, unroll: bool):
    return [Dense("fc", ADULT_FEATURES, 1)], (ADULT_FEATURES,), 2, False


def _fcnn(seq_len: int, unroll: bool):
    layers = [Dense("fc1", ADULT_FEATURES, 50), Relu("relu1"), Dense("fc2", 50, 10)]
    return layers, (ADULT_FEATURES,), 10, False


def _out(size: int, k: int, stride: int = 1, pad: int = 0) -> int:
    return (size + 2 * pad - k) // stride + 1


def _mnist_cnn(seq_len: int, unroll: bool):
    # 28 -> conv 14 -> pool 13 -> conv 10 -> pool 9 -> conv 6
    side = _out(_out(_out(_out(_out(28, 8, 2, 3), 2), 4), 2), 4)
    layers = [
        Conv2d("conv1", 1, 16, 8, stride=2, pad=3),
        Relu("relu1"),
        MaxPool2d("pool1", 2, 1),
        Conv2d("conv2", 16, 32, 4),
        Relu("relu2"),
        MaxPool2d("pool2", 2, 1),
        Conv2d("conv3", 32, 32, 4),
        Relu("relu3"),
        Flatten("flatten"),
        Dense("fc1", 32 * side * side, 32),
        Relu("relu4"),
        Dense("fc2", 32, 10),
    ]
    return layers, (1, 28, 28), 10, False


def _cifar_cnn(seq_len: int, unroll: bool):
    widths = [(3, 32), (32, 32), (32, 64), (64, 64), (64, 128), (128, 128), (128, 256), (256, 10)]
    layers: list[Layer] = []
    for i, (c_in, c_out) in enumerate(widths, start=1):
        layers.append(Conv2d(f"conv{i}", c_in, c_out, 3, stride=1, pad=1))
        if i < len(widths):
            layers.append(Relu(f"relu{i}"))
        if i in (2, 4, 6):
            layers.append(AvgPool2d(f"pool{i // 2}", 2, 2))
    layers.append(GlobalAvgPool2d("gap"))
    return layers, (3, 32, 32), 10, False


def _embed(seq_len: int, unroll: bool):
    layers = [Embedding("embed", VOCAB_SIZE, 16), SequenceMean("pool"), Dense("fc", 16, 2)]
    return layers, (seq_len,), 2, True


def _lstm(seq_len: int, unroll: bool):
    layers = [
        Embedding("embed", VOCAB_SIZE, 100),
        Lstm("lstm", 100, 100, unroll=unroll),
        SequenceMean("pool"),
        Dense("fc", 100, 2),
    ]
    return layers, (seq_len,), 2, True


_BUILDERS: dict[str, Callable] = {
    "logreg": _logreg,
    "fcnn": _fcnn,
    "mnist_cnn": _mnist_cnn,
    "cifar_cnn": _cifar_cnn,
    "embed": _embed,
    "lstm": _lstm,
}


def build(
    kind: ModelKind,
    rng: Optional[RngState] = None,
    dtype=np.float64,
    seq_len: int = SEQ_LEN,
    unroll: bool = False,
) -> Model:
    """Build one of the benchmark architectures with freshly initialized parameters.

    :param kind: Architecture identifier.
    :param rng: Source for initialization; seed 0 when omitted.
    :param dtype: Element type of parameters and real inputs.
    :param seq_len: Sequence length of the token models.
    :param unroll: Record the LSTM one step at a time instead of as a scan.
    """
    if kind not in get_args(ModelKind):
        raise ValueError(f"Unknown model kind: {kind}. Please choose from {get_args(ModelKind)}")
    layers, example_shape, num_classes, token_input = _BUILDERS[kind](seq_len, unroll)
    model = Model(kind, layers, example_shape, num_classes, np.dtype(dtype), token_input)
    model.params = model.init(rng if rng is not None else RngState(0))
    logger.debug(f"Built {kind} with {model.num_parameters} parameters")
    return model
