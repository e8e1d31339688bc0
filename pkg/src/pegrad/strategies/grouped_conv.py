import numpy as np

from pegrad.models.layers import Layer
from pegrad.strategies.dense import TapStrategy
from pegrad.tensor_core.tensor import Tensor


def grouped_conv_weight_grads(
    act: Tensor, cot: Tensor, kernel: tuple[int, int], stride: int, pad: int
) -> Tensor:
    """Per-example kernel gradients ``[B, D, C, kh, kw]``.

    Treating each example as its own channel group, the kernel gradient at offset
    ``(i, j)`` correlates the strided input window starting there with the output
    cotangent, independently for every example.
    """
    batch, channels = act.shape[:2]
    out_h, out_w = cot.shape[2:]
    kh, kw = kernel
    padded = np.pad(act, [(0, 0), (0, 0), (pad, pad), (pad, pad)]) if pad else act
    grads = np.empty((batch, cot.shape[1], channels, kh, kw), dtype=act.dtype)
    for i in range(kh):
        for j in range(kw):
            window = padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride]
            grads[:, :, :, i, j] = np.einsum("bcpq,bdpq->bdc", window, cot)
    return grads


class GroupedConv(TapStrategy):
    """Convolution layers through the grouped-convolution rewrite; dense layers as
    outer products."""

    name = "groupconv"
    supported_kinds = frozenset({"conv2d", "dense"})

    def layer_grads(self, layer: Layer, act: Tensor, cot: Tensor) -> dict[str, Tensor]:
        if layer.kind != "conv2d":
            return super().layer_grads(layer, act, cot)
        return {
            f"{layer.name}.W": grouped_conv_weight_grads(
                act, cot, (layer.kernel, layer.kernel), layer.stride, layer.pad
            ),
            f"{layer.name}.b": cot.sum(axis=(2, 3)),
        }
