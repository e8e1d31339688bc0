import numpy as np

from pegrad.errors import ConfigError, ContractError
from pegrad.strategies.base import PerExampleGrads


def clip_scales(norms, clip_norm: float) -> np.ndarray:
    """``min(1, C / norm)`` per example; a zero norm keeps scale 1."""
    norms = np.asarray(norms, dtype=np.float64)
    if np.any(norms < 0):
        raise ContractError("norms must be non-negative")
    ratio = np.divide(clip_norm, norms, out=np.ones_like(norms), where=norms > 0)
    return np.minimum(1.0, ratio)


def clip(grads: PerExampleGrads, clip_norm: float) -> PerExampleGrads:
    """Rescale each example's gradient so its total l2 norm over all parameter
    blocks is at most ``clip_norm``; directions are kept."""
    if grads.norms_only:
        raise ContractError("clipping needs materialized gradients; use clip_scales with the norms")
    if not clip_norm > 0:
        raise ConfigError(f"clip_norm must be positive, got {clip_norm}")
    scales = clip_scales(grads.norms(), clip_norm)
    clipped = {}
    for name, g in grads.grads.items():
        factor = scales.reshape((-1,) + (1,) * (g.ndim - 1))
        clipped[name] = (g * factor).astype(g.dtype, copy=False)
    return PerExampleGrads(clipped)


def microbatch(grads: PerExampleGrads, size: int) -> PerExampleGrads:
    """Average consecutive groups of ``size`` examples, giving ``B / size`` rows."""
    if grads.norms_only:
        raise ConfigError("microbatching needs materialized per-example gradients")
    batch_size = grads.batch_size
    if size < 1 or batch_size % size:
        raise ConfigError(f"batch size {batch_size} is not divisible by microbatch size {size}")
    if size == 1:
        return grads
    return PerExampleGrads(
        {
            name: g.reshape((batch_size // size, size) + g.shape[1:]).mean(axis=1).astype(g.dtype)
            for name, g in grads.grads.items()
        }
    )
