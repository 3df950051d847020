"""Sequence losses: squared error, cross-entropy and the attention-path term."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from ..model import ForwardOutput


def one_hot(labels: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(labels.shape + (size,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def compute_loss(out: ForwardOutput, heads, labels: dict[str, np.ndarray], positions: np.ndarray | None = None,
                 attn_weight: float = 1.0, cont_stats: dict | None = None) -> tuple[Tensor, dict[str, float]]:
    """Batch-mean of summed per-step losses.

    ``labels`` maps head name to (B, H) class ids or (B, H, d) values in
    original units; continuous values are standardized with ``cont_stats``
    (name -> (mean, std)) before comparison. ``positions`` (B, H, 2) are the
    robot-frame path targets; the attention term exists only when the output
    carries predicted positions.
    """
    names = {h.name for h in heads}
    if set(labels) != names or set(out.events) != names:
        raise ValueError(f"label/head mismatch: labels {sorted(labels)}, heads {sorted(names)}, "
                         f"outputs {sorted(out.events)}")
    batch = None
    disc = cont = None
    for h in heads:
        lab = np.asarray(labels[h.name])
        batch = lab.shape[0]
        if h.kind == "discrete":
            target = one_hot(lab.astype(np.int64), h.size)
            if target.shape != out.log_probs[h.name].shape:
                raise ValueError(f"head {h.name!r}: labels {lab.shape} vs outputs {out.log_probs[h.name].shape}")
            term = ops.scale(ops.sum(ops.mul(out.log_probs[h.name], Tensor(target))), -1.0)
            disc = term if disc is None else ops.add(disc, term)
        else:
            mean, std = (cont_stats or {}).get(h.name, (0.0, 1.0))
            target = (lab - np.asarray(mean)) / np.asarray(std)
            if target.shape != out.events[h.name].shape:
                raise ValueError(f"head {h.name!r}: labels {lab.shape} vs outputs {out.events[h.name].shape}")
            term = ops.sum(ops.square(ops.sub(out.events[h.name], Tensor(target))))
            cont = term if cont is None else ops.add(cont, term)
    parts = [t for t in (disc, cont) if t is not None]
    attn = None
    if out.positions is not None and positions is not None and attn_weight != 0.0:
        attn = ops.sum(ops.square(ops.sub(out.positions, Tensor(np.asarray(positions, dtype=np.float64)))))
        parts.append(ops.scale(attn, attn_weight))
    total = parts[0]
    for p in parts[1:]:
        total = ops.add(total, p)
    total = ops.scale(total, 1.0 / batch)
    comps = {"total": total.item(),
             "disc": 0.0 if disc is None else disc.item() / batch,
             "cont": 0.0 if cont is None else cont.item() / batch,
             "attn": 0.0 if attn is None else attn.item() / batch}
    return total, comps
