"""Counter-based splitmix64 random source with Box–Muller normals.

A draw depends only on ``(seed, stream, counter)``, so any stream can be replayed
without generating the ones before it.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


@dataclass
class RngState:
    """Single-owner random state; ``counter`` advances by the number of uniforms drawn."""

    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        self.seed &= _MASK
        self.stream &= _MASK

    def fork(self, stream: int) -> "RngState":
        return RngState(self.seed, stream)


def _mix_scalar(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _stream_key(rng: RngState) -> int:
    return _mix_scalar(rng.seed ^ _mix_scalar((rng.stream + _GOLDEN) & _MASK))


def random_bits(count: int, rng: RngState) -> np.ndarray:
    """Next ``count`` 64-bit outputs of the stream, advancing ``rng``."""
    positions = np.arange(rng.counter + 1, rng.counter + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = positions * np.uint64(_GOLDEN) + np.uint64(_stream_key(rng))
    rng.counter += count
    return _mix(states)


def uniform(shape: Sequence[int], rng: RngState, low=0.0, high=1.0, dtype=np.float64) -> np.ndarray:
    """Uniform variates on (low, high]."""
    count = int(np.prod(shape, dtype=np.int64))
    unit = ((random_bits(count, rng) >> np.uint64(11)) + np.uint64(1)).astype(np.float64)
    unit *= 2.0**-53
    return (low + (high - low) * unit).reshape(tuple(shape)).astype(dtype)


def gaussian(shape: Sequence[int], rng: RngState, dtype=np.float64) -> np.ndarray:
    """Standard normal variates, generated at 64-bit and cast to ``dtype``."""
    count = int(np.prod(shape, dtype=np.int64))
    pairs = (count + 1) // 2
    unit = uniform((pairs, 2), rng)
    radius = np.sqrt(-2.0 * np.log(unit[:, 0]))
    angle = 2.0 * np.pi * unit[:, 1]
    normals = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
    return normals[:count].reshape(tuple(shape)).astype(dtype)


def noise_stream(step: int, param_index: int, num_params: int) -> int:
    """Stream id reserved for the noise of one parameter tensor at one step."""
    return step * num_params + param_index


def shuffle_stream(epoch: int) -> int:
    """Stream id for the data order of one epoch, counted down from the top of the id space."""
    return (_MASK - epoch) & _MASK


def permutation(n: int, rng: RngState) -> np.ndarray:
    """Uniform random ordering of ``range(n)``, advancing ``rng`` by ``n`` draws."""
    return np.argsort(random_bits(n, rng), kind="stable")
