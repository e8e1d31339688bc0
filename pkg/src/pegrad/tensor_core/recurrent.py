"""LSTM recurrence over a whole sequence as a single scan primitive.

Gate pre-activations are laid out ``[input | forget | candidate | output]`` along the
last axis; the input projection ``x @ W + b`` is computed outside the scan.
"""

import numpy as np

from pegrad.errors import ShapeError
from pegrad.tensor_core.elementwise import _sigmoid
from pegrad.tensor_core.primitive import Primitive, register
from pegrad.tensor_core.tensor import Tensor, TensorSpec


def _scan_rule(xp: TensorSpec, u: TensorSpec) -> TensorSpec:
    if xp.ndim != 3 or u.ndim != 2:
        raise ShapeError(f"lstm_scan needs [N,L,4H] and [H,4H], got {xp.shape} and {u.shape}")
    hidden = u.shape[0]
    if u.shape[1] != 4 * hidden or xp.shape[2] != 4 * hidden:
        raise ShapeError(f"lstm_scan gate width mismatch: {xp.shape} vs {u.shape}")
    if xp.dtype != u.dtype or not xp.is_real:
        raise ShapeError(f"lstm_scan needs equal real element types, got {xp.dtype}, {u.dtype}")
    return TensorSpec(xp.shape[:2] + (hidden,), xp.dtype)


def _scan_grad_rule(xp: TensorSpec, u: TensorSpec, g: TensorSpec) -> TensorSpec:
    hs = _scan_rule(xp, u)
    if g.shape != hs.shape:
        raise ShapeError(f"lstm_scan cotangent {g.shape} does not match outputs {hs.shape}")
    return xp


def _gates(z: Tensor, hidden: int):
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden : 2 * hidden])
    cand = np.tanh(z[:, 2 * hidden : 3 * hidden])
    o = _sigmoid(z[:, 3 * hidden :])
    return i, f, cand, o


def _forward(xp: Tensor, u: Tensor, keep: bool):
    n, length, _ = xp.shape
    hidden = u.shape[0]
    h = np.zeros((n, hidden), dtype=xp.dtype)
    c = np.zeros((n, hidden), dtype=xp.dtype)
    hs = np.empty((n, length, hidden), dtype=xp.dtype)
    saved = []
    for t in range(length):
        z = np.add(xp[:, t], np.matmul(h, u))
        i, f, cand, o = _gates(z, hidden)
        c_prev = c
        c = np.add(np.multiply(f, c), np.multiply(i, cand))
        tanh_c = np.tanh(c)
        h = np.multiply(o, tanh_c)
        hs[:, t] = h
        if keep:
            saved.append((i, f, cand, o, c_prev, tanh_c))
    return hs, saved


def _lstm_scan(xp: Tensor, u: Tensor) -> Tensor:
    return _forward(xp, u, keep=False)[0]


def _lstm_scan_grad(xp: Tensor, u: Tensor, g: Tensor) -> Tensor:
    """Backpropagate through time, returning the cotangent of ``xp``."""
    hidden = u.shape[0]
    _, saved = _forward(xp, u, keep=True)
    dz = np.empty_like(xp)
    dh_next = np.zeros(g.shape[:1] + (hidden,), dtype=xp.dtype)
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(xp.shape[1])):
        i, f, cand, o, c_prev, tanh_c = saved[t]
        dh = g[:, t] + dh_next
        dc = dh * o * (1 - tanh_c * tanh_c) + dc_next
        dz[:, t, :hidden] = dc * cand * i * (1 - i)
        dz[:, t, hidden : 2 * hidden] = dc * c_prev * f * (1 - f)
        dz[:, t, 2 * hidden : 3 * hidden] = dc * i * (1 - cand * cand)
        dz[:, t, 3 * hidden :] = dh * tanh_c * o * (1 - o)
        dc_next = dc * f
        dh_next = np.matmul(dz[:, t], u.T)
    return dz


lstm_scan = register(Primitive("lstm_scan", _lstm_scan, _scan_rule))
lstm_scan_grad = register(Primitive("lstm_scan_grad", _lstm_scan_grad, _scan_grad_rule))
