"""Differentiable ops.

Shapes must match exactly. The only broadcasting ops are the explicit ones:
:func:`broadcast_to`, :func:`bias_add`/:func:`linear` (row bias) and
:func:`broadcast_mul` (2D mask over the channels of a feature map).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, record


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record("add_scalar", a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a (n,) bias to every row of a (batch, n) tensor."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"bias_add: shape mismatch {x.shape} vs {b.shape}")
    return record("bias_add", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for x (batch, in), w (in, out), b (out,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: shape mismatch {x.shape} vs {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} vs weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is None:
        return record("linear", out, (x, w), lambda g: (g @ wd.T, xd.T @ g))
    out += b.data
    return record("linear", out, (x, w, b), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    b, c = xp.shape[:2]
    # (B, C, Ho, Wo, k, k) -> (B*Ho*Wo, C*k*k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation. x (B, C, H, W), w (O, C, k, k), b (O,)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} vs weight {w.shape}")
    bsz, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} too large for input {x.shape} with padding {padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2)

    def backward_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(bsz, ho, wo, c, k, k)
            gxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv2d", np.ascontiguousarray(out), inputs, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # the tanh form cannot overflow for any input
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return record("log", np.log(xd), (x,), lambda g: (g / xd,))


def _check_axis(op: str, x: Tensor, axis: int) -> None:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")
    if x.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} has size 0 in shape {x.shape}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis("softmax", x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (x,), backward_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis("log_softmax", x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return record("log_softmax", y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4D input, got {x.shape}")
    b, c, h, w = x.shape
    n = h * w

    def backward_fn(g):
        return (np.broadcast_to((g / n)[:, :, None, None], x.shape).copy(),)

    return record("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), backward_fn)


def broadcast_mul(mask: Tensor, fmap: Tensor) -> Tensor:
    """Multiply a (B, H, W) mask into every channel of a (B, C, H, W) map."""
    if mask.ndim != 3 or fmap.ndim != 4 or mask.shape != (fmap.shape[0],) + fmap.shape[2:]:
        raise ShapeError(f"broadcast_mul: shape mismatch {mask.shape} vs {fmap.shape}")
    md, fd = mask.data, fmap.data
    out = md[:, None] * fd

    def backward_fn(g):
        return (g * fd).sum(axis=1), g * md[:, None]

    return record("broadcast_mul", out, (mask, fmap), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: shape mismatch {ref} vs {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(sizes)))

    return record("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shape tensors along a new axis."""
    if not tensors:
        raise ShapeError("stack: no inputs")
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    ax = axis % (tensors[0].ndim + 1)

    def backward_fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return record("stack", np.stack([t.data for t in tensors], axis=ax), tuple(tensors), backward_fn)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    shape = x.shape

    basic = _is_basic_index(idx)

    def backward_fn(g):
        gx = np.zeros(shape)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return record("getitem", np.array(out, dtype=np.float64), (x,), backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    old = x.shape
    return record("reshape", out, (x,), lambda g: (g.reshape(old),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; leading axes may be added."""
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    old = x.shape
    lead = len(shape) - len(old)

    def backward_fn(g):
        gs = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(old) if s == 1 and shape[lead + i] != 1)
        if axes:
            gs = gs.sum(axis=axes, keepdims=True)
        return (gs,)

    return record("broadcast_to", out, (x,), backward_fn)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(axis=axis), dtype=np.float64)
    shape = x.shape

    def backward_fn(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record("sum", out, (x,), backward_fn)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis), 1.0 / n)


def clip(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp; the gradient is zero on and beyond the rails."""
    xd = x.data
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (xd > lo_v) & (xd < hi_v)
    return record("clip", np.clip(xd, lo_v, hi_v), (x,), lambda g: (g * inside,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return record("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def constant(data) -> Tensor:
    return Tensor(data)


__all__ = [
    "add", "sub", "mul", "scale", "add_scalar", "matmul", "bias_add", "linear", "conv2d",
    "relu", "sigmoid", "tanh", "exp", "log", "softmax", "log_softmax", "global_avg_pool",
    "broadcast_mul", "concat", "stack", "getitem", "reshape", "broadcast_to", "sum", "mean",
    "clip", "square", "constant", "as_tensor",
]
