import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from pegrad.dpsgd.config import DpConfig
from pegrad.dpsgd.step import StepReport, dpsgd_step
from pegrad.errors import ContractError
from pegrad.models.model import Model
from pegrad.strategies.base import Strategy
from pegrad.strategies.programs import Engine, batch_grad_tape, grads_from
from pegrad.tensor_core.rng import RngState, permutation, shuffle_stream
from pegrad.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    """Outcome of :meth:`Trainer.fit`.

    :param epoch_seconds: Wall-clock time of each epoch, compile time excluded.
    :param epoch_losses: Mean per-example loss over the training set after each epoch.
    """

    params: dict[str, Tensor]
    epoch_seconds: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    compile_seconds: float = 0.0
    reports: list[StepReport] = field(default_factory=list)


def mean_loss(model: Model, params: Mapping[str, Tensor], x: Tensor, y: Tensor, chunk: int = 512) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        losses = model.per_example_loss(params, x[start : start + chunk], y[start : start + chunk])
        total += float(np.sum(losses, dtype=np.float64))
    return total / len(x)


def predict(model: Model, params: Mapping[str, Tensor], x: Tensor, chunk: int = 512) -> np.ndarray:
    labels = []
    for start in range(0, len(x), chunk):
        logits = model.forward(params, x[start : start + chunk])
        if logits.shape[1] == 1:
            labels.append((logits[:, 0] > 0).astype(np.int64))
        else:
            labels.append(np.argmax(logits, axis=1))
    return np.concatenate(labels)


def accuracy(model: Model, params: Mapping[str, Tensor], x: Tensor, y: Tensor) -> float:
    return float(np.mean(predict(model, params, x) == y))


class Trainer:
    """Minibatch training loop, private (DPSGD) or plain SGD.

    Plain SGD is the same loop with the clip and noise stage switched off: the
    update is the mean gradient of the batch.

    :param strategy: Per-example gradient strategy, required when ``private``.
    :param private: Clip and noise each step.
    :param engine: Runs the plain SGD gradient program; the strategy's engine by default.
    """

    def __init__(
        self,
        model: Model,
        cfg: DpConfig,
        strategy: Optional[Strategy] = None,
        private: bool = True,
        engine: Optional[Engine] = None,
    ):
        if private and strategy is None:
            raise ValueError("private training needs a per-example gradient strategy")
        if strategy is not None:
            strategy.check_support(model)
        self.model = model
        self.cfg = cfg
        self.strategy = strategy
        self.private = private
        self.engine = engine or (strategy.engine if strategy is not None else Engine())
        self.rng = RngState(cfg.seed)
        self.step_count = 0

    def sgd_step(self, params, x: Tensor, y: Tensor) -> dict[str, Tensor]:
        batch_size = len(x)
        outputs = self.engine.run(
            ("sgd", self.model.signature, batch_size),
            lambda: batch_grad_tape(self.model, batch_size),
            {"x": x, "y": y},
            params,
        )
        grads = grads_from(outputs, params)
        return {
            name: (value - self.cfg.learning_rate * grads[name] / batch_size).astype(value.dtype)
            for name, value in params.items()
        }

    def train_step(self, params, x: Tensor, y: Tensor):
        if self.private:
            params, report = dpsgd_step(
                self.model, params, x, y, self.strategy, self.cfg, self.rng, self.step_count
            )
        else:
            params, report = self.sgd_step(params, x, y), None
        self.step_count += 1
        return params, report

    def _compile_seconds(self) -> float:
        seconds = self.engine.compile_seconds
        if self.strategy is not None and self.strategy.engine is not self.engine:
            seconds += self.strategy.engine.compile_seconds
        return seconds

    def fit(
        self,
        x: Tensor,
        y: Tensor,
        epochs: int,
        batch_size: int,
        params: Optional[Mapping[str, Tensor]] = None,
        track_loss: bool = True,
    ) -> TrainResult:
        """Run ``epochs`` passes over ``(x, y)`` in shuffled batches of ``batch_size``.

        Examples that do not fill a last batch are left out of that epoch, so every
        step runs the same compiled program.
        """
        if len(x) == 0 or len(x) != len(y):
            raise ContractError(f"training needs matching nonempty data, got {len(x)} inputs and {len(y)} labels")
        if not 1 <= batch_size <= len(x):
            raise ContractError(f"batch size {batch_size} must be between 1 and {len(x)}")
        params = dict(params if params is not None else self.model.params)
        result = TrainResult(params)
        compile_start = self._compile_seconds()
        for epoch in range(epochs):
            order = permutation(len(x), self.rng.fork(shuffle_stream(epoch)))
            compiled_before = self._compile_seconds()
            start = time.perf_counter()
            for first in range(0, len(x) - batch_size + 1, batch_size):
                rows = order[first : first + batch_size]
                params, report = self.train_step(params, x[rows], y[rows])
                if report is not None:
                    result.reports.append(report)
            elapsed = time.perf_counter() - start - (self._compile_seconds() - compiled_before)
            result.epoch_seconds.append(elapsed)
            if track_loss:
                result.epoch_losses.append(mean_loss(self.model, params, x, y))
                logger.info(f"Epoch {epoch + 1}/{epochs}: loss {result.epoch_losses[-1]:.4f} in {elapsed:.3f}s")
        result.params = params
        result.compile_seconds = self._compile_seconds() - compile_start
        return result
