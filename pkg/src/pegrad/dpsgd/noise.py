"""Gaussian noising of the clipped gradient sum.

Each parameter block draws from its own stream, ``noise_stream(step, index,
num_params)``, forked off one seeded state, so a step's noise can be replayed
without generating earlier steps.
"""

from typing import Mapping

import numpy as np

from pegrad.dpsgd.config import DpConfig
from pegrad.strategies.base import PerExampleGrads
from pegrad.tensor_core.rng import RngState, gaussian, noise_stream
from pegrad.tensor_core.tensor import Tensor


def noise_streams(step: int, names) -> dict[str, int]:
    names = list(names)
    return {name: noise_stream(step, i, len(names)) for i, name in enumerate(names)}


def noisy_mean(
    summed: Mapping[str, Tensor], rows: int, cfg: DpConfig, rng: RngState, step: int = 0
) -> dict[str, Tensor]:
    """``(sum + N(0, (sigma * C)^2 I)) / rows`` for every parameter block.

    Noise is generated at 64-bit and the result cast back to each block's dtype.
    No draws are made when the noise multiplier is zero.
    """
    streams = noise_streams(step, summed)
    result = {}
    for name, total in summed.items():
        value = np.asarray(total, dtype=np.float64)
        if cfg.noise_multiplier > 0:
            value = value + cfg.noise_std * gaussian(total.shape, rng.fork(streams[name]))
        result[name] = (value / rows).astype(total.dtype)
    return result


def aggregate_noise(
    clipped: PerExampleGrads, cfg: DpConfig, rng: RngState, step: int = 0
) -> dict[str, Tensor]:
    """Noisy mean of clipped per-example gradients."""
    return noisy_mean(clipped.sum(), clipped.batch_size, cfg, rng, step)
