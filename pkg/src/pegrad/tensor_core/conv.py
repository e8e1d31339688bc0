"""Convolution and pooling over ``[N, C, H, W]`` tensors via im2col + matmul."""

from typing import Literal, get_args

import numpy as np

from pegrad.errors import ShapeError
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.reduction import reduce_mean
from pegrad.tensor_core.tensor import Tensor, TensorSpec

PoolKind = Literal["avg", "max"]


def output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    """Extent of a strided window sweep; raises when windows do not tile exactly."""
    if stride < 1 or pad < 0 or kernel < 1:
        raise ShapeError(f"invalid window: kernel {kernel}, stride {stride}, pad {pad}")
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ShapeError(
            f"window {kernel} with stride {stride} and pad {pad} does not tile extent {size}"
        )
    return span // stride + 1


def im2col(x: Tensor, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    """Unfold ``x`` [N, C, H, W] into patches [N, out_h*out_w, C*kh*kw]."""
    n, c, h, w = x.shape
    out_h = output_extent(h, kh, stride, pad)
    out_w = output_extent(w, kw, stride, pad)
    img = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)]) if pad else x
    col = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for y in range(kh):
        y_max = y + stride * out_h
        for xx in range(kw):
            x_max = xx + stride * out_w
            col[:, :, y, xx, :, :] = img[:, :, y:y_max:stride, xx:x_max:stride]
    # (N, C, kh, kw, oh, ow) -> (N, oh, ow, C, kh, kw)
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n, out_h * out_w, c * kh * kw)


def col2im(
    col: Tensor, input_shape: tuple[int, int, int, int], kh: int, kw: int, stride: int, pad: int
) -> Tensor:
    """Fold patch rows back onto an image, summing overlapping contributions."""
    n, c, h, w = input_shape
    out_h = output_extent(h, kh, stride, pad)
    out_w = output_extent(w, kw, stride, pad)
    col = col.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    for y in range(kh):
        y_max = y + stride * out_h
        for xx in range(kw):
            x_max = xx + stride * out_w
            img[:, :, y:y_max:stride, xx:x_max:stride] += col[:, :, y, xx, :, :]
    return np.ascontiguousarray(img[:, :, pad : pad + h, pad : pad + w])


def _conv_rule(x: TensorSpec, w: TensorSpec, stride: int, pad: int) -> TensorSpec:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs [N,C,H,W] and [D,C,kh,kw], got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if x.dtype != w.dtype or not x.is_real:
        raise ShapeError(f"conv2d needs equal real element types, got {x.dtype} and {w.dtype}")
    out_h = output_extent(x.shape[2], w.shape[2], stride, pad)
    out_w = output_extent(x.shape[3], w.shape[3], stride, pad)
    return TensorSpec((x.shape[0], w.shape[0], out_h, out_w), x.dtype)


def _conv2d(x: Tensor, w: Tensor, stride: int, pad: int) -> Tensor:
    n = x.shape[0]
    d, c, kh, kw = w.shape
    out_h = output_extent(x.shape[2], kh, stride, pad)
    out_w = output_extent(x.shape[3], kw, stride, pad)
    cols = im2col(x, kh, kw, stride, pad).reshape(n * out_h * out_w, c * kh * kw)
    out = np.matmul(cols, w.reshape(d, c * kh * kw).T)
    return np.ascontiguousarray(out.reshape(n, out_h, out_w, d).transpose(0, 3, 1, 2))


def _grad_input_rule(
    g: TensorSpec, w: TensorSpec, input_hw: tuple[int, int], stride: int, pad: int
) -> TensorSpec:
    if g.ndim != 4 or w.ndim != 4 or g.shape[1] != w.shape[0]:
        raise ShapeError(f"conv2d_grad_input mismatch: cotangent {g.shape}, kernel {w.shape}")
    expected = (
        output_extent(input_hw[0], w.shape[2], stride, pad),
        output_extent(input_hw[1], w.shape[3], stride, pad),
    )
    if g.shape[2:] != expected:
        raise ShapeError(f"cotangent {g.shape} does not match input extent {input_hw}")
    return TensorSpec((g.shape[0], w.shape[1]) + tuple(input_hw), g.dtype)


def _conv2d_grad_input(
    g: Tensor, w: Tensor, input_hw: tuple[int, int], stride: int, pad: int
) -> Tensor:
    n, d, out_h, out_w = g.shape
    _, c, kh, kw = w.shape
    g2 = g.transpose(0, 2, 3, 1).reshape(n * out_h * out_w, d)
    dcol = np.matmul(g2, w.reshape(d, c * kh * kw))
    return col2im(dcol, (n, c) + tuple(input_hw), kh, kw, stride, pad)


def _grad_weight_rule(
    x: TensorSpec,
    g: TensorSpec,
    kernel_hw: tuple[int, int],
    stride: int,
    pad: int,
    batch_dims: int,
) -> TensorSpec:
    lead = batch_dims
    if x.ndim != 4 + lead or g.ndim != 4 + lead or x.shape[: lead + 1] != g.shape[: lead + 1]:
        raise ShapeError(f"conv2d_grad_weight mismatch: input {x.shape}, cotangent {g.shape}")
    expected = (
        output_extent(x.shape[lead + 2], kernel_hw[0], stride, pad),
        output_extent(x.shape[lead + 3], kernel_hw[1], stride, pad),
    )
    if g.shape[lead + 2 :] != expected:
        raise ShapeError(f"cotangent {g.shape} does not match input {x.shape}")
    shape = x.shape[:lead] + (g.shape[lead + 1], x.shape[lead + 1]) + tuple(kernel_hw)
    return TensorSpec(shape, x.dtype)


def _conv2d_grad_weight(
    x: Tensor,
    g: Tensor,
    kernel_hw: tuple[int, int],
    stride: int,
    pad: int,
    batch_dims: int,
) -> Tensor:
    kh, kw = kernel_hw
    if batch_dims == 0:
        n, c = x.shape[:2]
        d = g.shape[1]
        cols = im2col(x, kh, kw, stride, pad).reshape(-1, c * kh * kw)
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, d)
        return np.ascontiguousarray(np.matmul(g2.T, cols).reshape(d, c, kh, kw))
    # one weight gradient per leading example: patches and cotangents are
    # correlated example by example with a batched matmul
    b, n, c = x.shape[:3]
    d = g.shape[2]
    cols = im2col(x.reshape((b * n,) + x.shape[2:]), kh, kw, stride, pad)
    cols = cols.reshape(b, -1, c * kh * kw)
    g2 = g.reshape(b * n, d, -1).transpose(0, 2, 1).reshape(b, -1, d)
    return np.ascontiguousarray(np.matmul(g2.transpose(0, 2, 1), cols).reshape(b, d, c, kh, kw))


def _pool_rule(x: TensorSpec, k: int, stride: int) -> TensorSpec:
    if x.ndim != 4 or not x.is_real:
        raise ShapeError(f"pooling needs a real [N,C,H,W] operand, got {x.shape}")
    out_h = output_extent(x.shape[2], k, stride, 0)
    out_w = output_extent(x.shape[3], k, stride, 0)
    return TensorSpec(x.shape[:2] + (out_h, out_w), x.dtype)


def _pool_grad_rule(*specs: TensorSpec, k: int, stride: int, input_hw: tuple[int, int]) -> TensorSpec:
    g = specs[-1]
    expected = (output_extent(input_hw[0], k, stride, 0), output_extent(input_hw[1], k, stride, 0))
    if g.ndim != 4 or g.shape[2:] != expected:
        raise ShapeError(f"pool cotangent {g.shape} does not match input extent {input_hw}")
    if len(specs) == 2 and specs[0].shape != g.shape[:2] + tuple(input_hw):
        raise ShapeError(f"pool input {specs[0].shape} does not match cotangent {g.shape}")
    return TensorSpec(g.shape[:2] + tuple(input_hw), g.dtype)


def _windows(x: Tensor, k: int, stride: int):
    out_h = output_extent(x.shape[2], k, stride, 0)
    out_w = output_extent(x.shape[3], k, stride, 0)
    for y in range(k):
        for xx in range(k):
            yield (
                slice(None),
                slice(None),
                slice(y, y + stride * out_h, stride),
                slice(xx, xx + stride * out_w, stride),
            )


def _max_pool2d(x: Tensor, k: int, stride: int) -> Tensor:
    out = None
    for window in _windows(x, k, stride):
        out = x[window].copy() if out is None else np.maximum(out, x[window], out=out)
    return out


def _avg_pool2d(x: Tensor, k: int, stride: int) -> Tensor:
    out = None
    for window in _windows(x, k, stride):
        out = x[window].copy() if out is None else np.add(out, x[window], out=out)
    return np.divide(out, k * k, out=out)


def _max_pool2d_grad(x: Tensor, g: Tensor, k: int, stride: int, input_hw: tuple[int, int]) -> Tensor:
    out = _max_pool2d(x, k, stride)
    dx = np.zeros_like(x)
    # ties route the cotangent to the first window position only
    routed = np.zeros(out.shape, dtype=bool)
    for window in _windows(x, k, stride):
        hit = (x[window] == out) & ~routed
        dx[window] += np.where(hit, g, 0)
        routed |= hit
    return dx


def _avg_pool2d_grad(g: Tensor, k: int, stride: int, input_hw: tuple[int, int]) -> Tensor:
    dx = np.zeros(g.shape[:2] + tuple(input_hw), dtype=g.dtype)
    share = g / (k * k)
    for window in _windows(dx, k, stride):
        dx[window] += share
    return dx


conv2d_p = register(Primitive("conv2d", _conv2d, _conv_rule))
conv2d_grad_input_p = register(Primitive("conv2d_grad_input", _conv2d_grad_input, _grad_input_rule))
conv2d_grad_weight_p = register(
    Primitive("conv2d_grad_weight", _conv2d_grad_weight, _grad_weight_rule)
)
max_pool2d_p = register(Primitive("max_pool2d", _max_pool2d, _pool_rule))
avg_pool2d_p = register(Primitive("avg_pool2d", _avg_pool2d, _pool_rule))
max_pool2d_grad_p = register(Primitive("max_pool2d_grad", _max_pool2d_grad, _pool_grad_rule))
avg_pool2d_grad_p = register(Primitive("avg_pool2d_grad", _avg_pool2d_grad, _pool_grad_rule))


def conv2d(x, w, stride: int = 1, pad: int = 0):
    return conv2d_p(x, w, stride=int(stride), pad=int(pad))


def conv2d_grad_input(g, w, input_hw, stride: int, pad: int):
    return conv2d_grad_input_p(
        g, w, input_hw=tuple(int(s) for s in input_hw), stride=int(stride), pad=int(pad)
    )


def conv2d_grad_weight(x, g, kernel_hw, stride: int, pad: int, batch_dims: int = 0):
    return conv2d_grad_weight_p(
        x,
        g,
        kernel_hw=tuple(int(s) for s in kernel_hw),
        stride=int(stride),
        pad=int(pad),
        batch_dims=int(batch_dims),
    )


def pool2d(kind: PoolKind, x, k: int, stride: int):
    if kind not in get_args(PoolKind):
        raise ValueError(f"Unknown pool kind: {kind}. Please choose from {get_args(PoolKind)}")
    prim = max_pool2d_p if kind == "max" else avg_pool2d_p
    return prim(x, k=int(k), stride=int(stride))


def global_avg_pool2d(x):
    """Average over both spatial axes of [N, C, H, W], giving [N, C]."""
    return reduce_mean(x, axes=(2, 3))
