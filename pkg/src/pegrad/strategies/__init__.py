from typing import Literal, get_args

from .base import PASSTHROUGH_KINDS, PerExampleGrads, Strategy
from .dense import DenseNorms, OuterProductDense, TapStrategy, dense_grads
from .grouped_conv import GroupedConv, grouped_conv_weight_grads
from .jacobian import JacobianProduct, conv_weight_grads
from .naive import NaiveLoop
from .programs import (
    Engine,
    ExecutionMode,
    batch_grad_tape,
    tapped_grad_tape,
    vmapped_grad_tape,
    weighted_grad_tape,
)
from .vectorized import VmapStrategy

StrategyName = Literal["naive", "vmap", "outer", "norms", "groupconv", "jacmm"]

_STRATEGIES = {
    "naive": NaiveLoop,
    "vmap": VmapStrategy,
    "outer": OuterProductDense,
    "norms": DenseNorms,
    "groupconv": GroupedConv,
    "jacmm": JacobianProduct,
}


def get_strategy(name: StrategyName, mode: ExecutionMode = "graph") -> Strategy:
    if name not in get_args(StrategyName):
        raise ValueError(f"Unknown strategy: {name}. Please choose from {get_args(StrategyName)}")
    return _STRATEGIES[name](mode)


__all__ = [
    "PASSTHROUGH_KINDS",
    "DenseNorms",
    "Engine",
    "ExecutionMode",
    "GroupedConv",
    "JacobianProduct",
    "NaiveLoop",
    "OuterProductDense",
    "PerExampleGrads",
    "Strategy",
    "StrategyName",
    "TapStrategy",
    "VmapStrategy",
    "batch_grad_tape",
    "conv_weight_grads",
    "dense_grads",
    "get_strategy",
    "grouped_conv_weight_grads",
    "tapped_grad_tape",
    "vmapped_grad_tape",
    "weighted_grad_tape",
]
