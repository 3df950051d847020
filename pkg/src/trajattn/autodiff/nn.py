"""Layer helpers built from :mod:`ops`: initialisation and the LSTM cell."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str | None = None, fill: float = 0.0) -> Tensor:
    return Tensor(np.full(shape, fill), requires_grad=True, name=name)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.

    ``w`` has shape (in + hidden, 4 * hidden) with gate blocks ordered
    input, forget, candidate, output; ``b`` has shape (4 * hidden,).
    """
    hidden = h.shape[1]
    if w.ndim != 2 or w.shape[1] != 4 * hidden or b.shape != (4 * hidden,):
        raise ShapeError(f"lstm_cell: hidden size {hidden} does not match weights {w.shape}, bias {b.shape}")
    if c.shape != h.shape:
        raise ShapeError(f"lstm_cell: h {h.shape} and c {c.shape} differ")
    if x.ndim != 2 or x.shape[0] != h.shape[0] or x.shape[1] + hidden != w.shape[0]:
        raise ShapeError(f"lstm_cell: input {x.shape} inconsistent with h {h.shape} and weights {w.shape}")
    z = ops.linear(ops.concat([x, h], axis=1), w, b)
    i = ops.sigmoid(z[:, :hidden])
    f = ops.sigmoid(z[:, hidden:2 * hidden])
    g = ops.tanh(z[:, 2 * hidden:3 * hidden])
    o = ops.sigmoid(z[:, 3 * hidden:])
    c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, c_new
