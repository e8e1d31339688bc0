"""Fused, log-sum-exp stabilized cross-entropy.

A single logit column selects the binary (sigmoid) form with labels in {0, 1};
otherwise labels index the K classes.
"""

import numpy as np

from pegrad.errors import ShapeError
from pegrad.tensor_core.elementwise import _sigmoid
from pegrad.tensor_core.embedding import _check_ids
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import Tensor, TensorSpec


def _num_classes(logits: Tensor) -> int:
    return 2 if logits.shape[1] == 1 else logits.shape[1]


def _xent_rule(logits: TensorSpec, labels: TensorSpec) -> TensorSpec:
    if logits.ndim != 2 or not logits.is_real:
        raise ShapeError(f"cross-entropy needs real [N,K] logits, got {logits.shape}")
    if labels.dtype.kind not in "iu" or labels.shape != logits.shape[:1]:
        raise ShapeError(f"labels {labels.shape} {labels.dtype} do not match logits {logits.shape}")
    return TensorSpec(logits.shape[:1], logits.dtype)


def _xent_grad_rule(logits: TensorSpec, labels: TensorSpec, g: TensorSpec) -> TensorSpec:
    _xent_rule(logits, labels)
    if g.shape != logits.shape[:1]:
        raise ShapeError(f"cotangent {g.shape} does not match logits {logits.shape}")
    return logits


def _softmax_xent(logits: Tensor, labels: Tensor) -> Tensor:
    _check_ids(labels, _num_classes(logits))
    if logits.shape[1] == 1:
        z = logits[:, 0]
        y = labels.astype(logits.dtype)
        return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    picked = np.take_along_axis(shifted, labels.reshape(-1, 1).astype(np.intp), axis=1)[:, 0]
    return lse - picked


def _softmax_xent_grad(logits: Tensor, labels: Tensor, g: Tensor) -> Tensor:
    _check_ids(labels, _num_classes(logits))
    if logits.shape[1] == 1:
        y = labels.astype(logits.dtype).reshape(-1, 1)
        return (_sigmoid(logits) - y) * g.reshape(-1, 1)
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= np.sum(probs, axis=1, keepdims=True)
    probs[np.arange(logits.shape[0]), labels.astype(np.intp)] -= 1
    return probs * g.reshape(-1, 1)


softmax_xent = register(Primitive("softmax_xent", _softmax_xent, _xent_rule))
softmax_xent_grad = register(Primitive("softmax_xent_grad", _softmax_xent_grad, _xent_grad_rule))
