import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from pegrad.dpsgd.clipping import clip, clip_scales, microbatch
from pegrad.dpsgd.config import DpConfig
from pegrad.dpsgd.noise import noise_streams, noisy_mean
from pegrad.errors import ConfigError
from pegrad.models.model import Model
from pegrad.strategies.base import Strategy
from pegrad.tensor_core.rng import RngState
from pegrad.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class StepReport:
    """What one DPSGD step did.

    :param norms: Pre-clip l2 norm of every clipped row (an example, or a
        microbatch mean when microbatching).
    :param num_clipped: Rows whose norm exceeded the clip norm.
    :param noise_streams: Stream id used for each parameter block; empty when no
        noise was drawn.
    """

    step: int
    norms: np.ndarray
    num_clipped: int
    noise_streams: dict[str, int] = field(default_factory=dict)


def clipped_sum(
    model: Model, params: Mapping[str, Tensor], x: Tensor, y: Tensor, strategy: Strategy, cfg: DpConfig
) -> tuple[dict[str, Tensor], np.ndarray, int]:
    """Sum of clipped gradients, pre-clip norms and the number of clipped rows."""
    batch_size = len(x)
    cfg.check_batch(batch_size)
    if strategy.norms_only:
        if cfg.microbatch_size > 1:
            raise ConfigError(
                f"strategy {strategy.name} forms per-example norms only and cannot clip microbatch means"
            )
        norms = strategy.per_example_grads(model, params, x, y).norms()
        scales = clip_scales(norms, cfg.clip_norm)
        summed = strategy.weighted_gradient(model, params, x, y, scales)
        rows = batch_size
    else:
        grads = microbatch(strategy.per_example_grads(model, params, x, y), cfg.microbatch_size)
        norms = grads.norms()
        summed = clip(grads, cfg.clip_norm).sum()
        rows = grads.batch_size
    return summed, norms, rows


def dpsgd_step(
    model: Model,
    params: Mapping[str, Tensor],
    x: Tensor,
    y: Tensor,
    strategy: Strategy,
    cfg: DpConfig,
    rng: Optional[RngState] = None,
    step: int = 0,
) -> tuple[dict[str, Tensor], StepReport]:
    """One DPSGD update: per-example gradients, clip, noisy mean, then a step.

    :param rng: Owner of the noise streams; ``RngState(cfg.seed)`` when omitted.
    :param step: Step counter selecting this step's noise streams.
    :return: Updated parameters (new arrays) and a :class:`StepReport`.
    """
    rng = rng if rng is not None else RngState(cfg.seed)
    summed, norms, rows = clipped_sum(model, params, x, y, strategy, cfg)
    # stream ids follow parameter order, whichever strategy produced the sum
    summed = {name: summed[name] for name in params}
    update = noisy_mean(summed, rows, cfg, rng, step)
    new_params = {
        name: (value - cfg.learning_rate * update[name]).astype(value.dtype)
        for name, value in params.items()
    }
    report = StepReport(
        step=step,
        norms=norms,
        num_clipped=int(np.count_nonzero(norms > cfg.clip_norm)),
        noise_streams=noise_streams(step, summed) if cfg.noise_multiplier > 0 else {},
    )
    logger.debug(f"Step {step}: clipped {report.num_clipped} of {len(norms)} rows")
    return new_params, report
