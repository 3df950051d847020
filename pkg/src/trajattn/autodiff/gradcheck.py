"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x.data``.

    ``indices`` restricts the entries perturbed (flat indices); the others
    are left at zero in the result.
    """
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.shape)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a| + |n|, 1e-8)`` over the checked entries (2-norms)."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> list[float]:
    """Compare backward() against central differences for each param.

    Returns one relative error per param. With ``max_entries`` only that many
    randomly chosen entries of each param are compared.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    errors = []
    rng = rng or np.random.default_rng(0)
    for p in params:
        if max_entries is not None and p.size > max_entries:
            idx = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        else:
            idx = np.arange(p.size)
        num = numerical_grad(lambda: _value(loss_fn), p, h, idx)
        errors.append(relative_error(p.grad.reshape(-1)[idx], num.reshape(-1)[idx]))
    return errors


def _value(loss_fn: Callable[[], Tensor]) -> float:
    with no_grad():
        return loss_fn().item()
