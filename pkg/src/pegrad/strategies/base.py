import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pegrad.errors import ContractError, UnsupportedArchitectureError
from pegrad.models.model import Model
from pegrad.strategies.programs import Engine, ExecutionMode
from pegrad.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

# layers without parameters that every strategy can backpropagate through
PASSTHROUGH_KINDS = frozenset(
    {"relu", "flatten", "max_pool2d", "avg_pool2d", "global_avg_pool2d", "sequence_mean"}
)


@dataclass
class PerExampleGrads:
    """Per-example gradients stacked on a leading batch axis.

    :param grads: Parameter name to ``[B, *param_shape]``. Empty when ``norms_only``.
    :param norms_only: Only squared per-example norms were formed.
    :param sq_norms: ``[B]`` squared total norms, set when ``norms_only``.
    """

    grads: dict[str, Tensor] = field(default_factory=dict)
    norms_only: bool = False
    sq_norms: Optional[np.ndarray] = None

    @property
    def batch_size(self) -> int:
        if self.norms_only:
            return len(self.sq_norms)
        return next(iter(self.grads.values())).shape[0]

    def norms(self) -> np.ndarray:
        """Per-example l2 norm over all parameter blocks together, in float64."""
        if self.norms_only:
            return np.sqrt(np.asarray(self.sq_norms, dtype=np.float64))
        total = np.zeros(self.batch_size, dtype=np.float64)
        for g in self.grads.values():
            flat = g.reshape(g.shape[0], -1).astype(np.float64)
            total += np.einsum("bk,bk->b", flat, flat)
        return np.sqrt(total)

    def sum(self) -> dict[str, Tensor]:
        if self.norms_only:
            raise ContractError("norms-only gradients cannot be summed")
        return {name: g.sum(axis=0) for name, g in self.grads.items()}


class Strategy(ABC):
    """A way of computing per-example gradients.

    :param mode: ``graph`` compiles each program once per batch size; ``eager``
        re-records and interprets it on every call.
    """

    name: str = "strategy"
    vectorized: bool = True
    # only per-example norms are formed; the clipped sum needs weighted_gradient
    norms_only: bool = False
    # parametrized layer kinds this strategy differentiates per example; None means all
    supported_kinds: Optional[frozenset[str]] = None

    def __init__(self, mode: ExecutionMode = "graph", engine: Optional[Engine] = None):
        self.engine = engine or Engine(mode)

    @property
    def mode(self) -> ExecutionMode:
        return self.engine.mode

    def unsupported_layer(self, model: Model) -> Optional[str]:
        if self.supported_kinds is None:
            return None
        allowed = self.supported_kinds | PASSTHROUGH_KINDS
        return next((layer.kind for layer in model.layers if layer.kind not in allowed), None)

    def supports(self, model: Model) -> bool:
        return self.unsupported_layer(model) is None

    def check_support(self, model: Model) -> None:
        kind = self.unsupported_layer(model)
        if kind is not None:
            raise UnsupportedArchitectureError(self.name, kind)

    def per_example_grads(self, model: Model, params, x: Tensor, y: Tensor) -> PerExampleGrads:
        self.check_support(model)
        if len(x) == 0:
            raise ContractError("per-example gradients need a nonempty batch")
        if len(x) != len(y):
            raise ContractError(f"{len(x)} inputs but {len(y)} labels")
        return self._compute(model, params, x, y)

    @abstractmethod
    def _compute(self, model: Model, params, x: Tensor, y: Tensor) -> PerExampleGrads:
        pass

    @abstractmethod
    def footprint_bytes(self, model: Model, batch_size: int) -> int:
        """Bytes the strategy needs for one batch: planned program peak plus the
        per-example results it materializes."""

    def __repr__(self) -> str:
        return f"{type(self).__name__}(mode={self.mode})"
