import numpy as np

from pegrad.models.layers import Layer
from pegrad.strategies.dense import TapStrategy
from pegrad.tensor_core.conv import im2col
from pegrad.tensor_core.embedding import scatter_add
from pegrad.tensor_core.tensor import Tensor


def conv_weight_grads(act: Tensor, cot: Tensor, kernel: int, stride: int, pad: int) -> Tensor:
    """Transposed-Jacobian product of a convolution: ``cot_b @ patches_b`` per example."""
    batch, channels = act.shape[:2]
    depth = cot.shape[1]
    cols = im2col(act, kernel, kernel, stride, pad)
    g = np.matmul(cot.reshape(batch, depth, -1), cols)
    return g.reshape(batch, depth, channels, kernel, kernel)


class JacobianProduct(TapStrategy):
    """One backward sweep carrying the batch of output cotangents; each layer's
    per-example block is its transposed Jacobian applied to those cotangents."""

    name = "jacmm"
    supported_kinds = frozenset({"dense", "conv2d", "embedding"})

    def layer_grads(self, layer: Layer, act: Tensor, cot: Tensor) -> dict[str, Tensor]:
        if layer.kind == "conv2d":
            return {
                f"{layer.name}.W": conv_weight_grads(act, cot, layer.kernel, layer.stride, layer.pad),
                f"{layer.name}.b": cot.sum(axis=(2, 3)),
            }
        if layer.kind == "embedding":
            # ids [B, L] and row cotangents [B, L, E] scatter into one table per example
            return {f"{layer.name}.E": scatter_add(cot, act, layer.vocab_size, batch_dims=1)}
        return super().layer_grads(layer, act, cot)
