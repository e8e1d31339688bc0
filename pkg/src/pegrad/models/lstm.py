"""LSTM recurrence built from primitives.

Gate pre-activations are laid out ``[input | forget | candidate | output]``, the same
layout the ``lstm_scan`` primitive uses, so the unrolled and scanned forms agree.
"""

from pegrad.tensor_core import elementwise as ew, linalg
from pegrad.tensor_core import shape_ops as so
from pegrad.tensor_core.recurrent import lstm_scan


def _gates(z, hidden: int):
    i = ew.sigmoid(so.slice_axis(z, 1, 0, hidden))
    f = ew.sigmoid(so.slice_axis(z, 1, hidden, 2 * hidden))
    cand = ew.tanh(so.slice_axis(z, 1, 2 * hidden, 3 * hidden))
    o = ew.sigmoid(so.slice_axis(z, 1, 3 * hidden, 4 * hidden))
    return i, f, cand, o


def _step(z, c, hidden: int):
    i, f, cand, o = _gates(z, hidden)
    update = ew.mul(i, cand)
    c = update if c is None else ew.add(ew.mul(f, c), update)
    return ew.mul(o, ew.tanh(c)), c


def lstm_cell(x_t, h, c, w, u, b):
    """One LSTM step.

    :param x_t: Input at this step, ``[N, E]``.
    :param h: Previous hidden state ``[N, H]``.
    :param c: Previous cell state ``[N, H]``.
    :param w: Input weights ``[E, 4H]``.
    :param u: Recurrent weights ``[H, 4H]``.
    :param b: Gate biases ``[4H]``.
    :return: ``(h', c')``.
    """
    hidden = u.shape[0]
    z = ew.add(ew.add(linalg.matmul(x_t, w), b), linalg.matmul(h, u))
    return _step(z, c, hidden)


def input_projection(x, w, b):
    """``x @ w + b`` for every step of ``[N, L, E]`` at once, giving ``[N, L, 4H]``."""
    n, length, features = x.shape
    flat = linalg.matmul(so.reshape(x, (n * length, features)), w)
    return ew.add(so.reshape(flat, (n, length, w.shape[1])), b)


def lstm_sequence(x, w, u, b, unroll: bool = False):
    """Run the recurrence over ``[N, L, E]`` from a zero state; returns ``[N, L, H]``."""
    xp = input_projection(x, w, b)
    if not unroll:
        return lstm_scan(xp, u)
    n, length, gates = xp.shape
    hidden = u.shape[0]
    h = c = None
    outputs = []
    for t in range(length):
        z = so.reshape(so.slice_axis(xp, 1, t, t + 1), (n, gates))
        if h is not None:
            z = ew.add(z, linalg.matmul(h, u))
        h, c = _step(z, c, hidden)
        outputs.append(so.reshape(h, (n, 1, hidden)))
    return outputs[0] if length == 1 else so.concat(outputs, axis=1)
