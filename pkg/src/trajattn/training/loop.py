"""Minibatch training with best-validation weight retention, and evaluation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import AdamState, NonFiniteGradientError, adam_step, backward, no_grad
from ..geometry import mask_centroid
from ..model import EventModel, ModelConfig
from .data import Dataset, train_val_split
from .loss import compute_loss

METRIC_COLUMNS = ["epoch", "split", "head", "metric", "value", "seed", "config_hash"]


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float | None = None  # None: 1e-4 with attention, 5e-4 without
    attn_weight: float = 1.0
    train_fraction: float = 0.8
    primary_head: str | None = None  # defaults to the first discrete head
    eval_batch: int = 256

    def decay_for(self, variant: str) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return 5e-4 if variant == "none" else 1e-4


@dataclass
class TrainResult:
    model: EventModel
    cont_stats: dict
    best_epoch: int
    best_score: float
    rows: list = field(default_factory=list)  # metric rows, METRIC_COLUMNS order
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None

    def metric(self, split: str, head: str, metric: str) -> list[float]:
        return [r[4] for r in self.rows if r[1] == split and r[2] == head and r[3] == metric]


def continuous_stats(ds: Dataset, idx) -> dict:
    stats = {}
    for h in ds.heads:
        if h.kind == "continuous":
            v = ds.labels[h.name][idx].reshape(-1, h.size)
            stats[h.name] = (v.mean(axis=0).tolist(), np.maximum(v.std(axis=0), 1e-6).tolist())
    return stats


def _forward(model: EventModel, ds: Dataset, idx):
    return model.forward_full(ds.float_images(idx), ds.actions[idx])


def evaluate(model: EventModel, ds: Dataset, idx=None, cont_stats: dict | None = None,
             batch: int = 256) -> dict[tuple[str, str], float]:
    """Per-head accuracy / MSE plus attention diagnostics, averaged over samples and steps.

    Keys are (head, metric). Ties in argmax go to the lowest class index.
    """
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("evaluate needs at least one sample")
    sums: dict[tuple[str, str], float] = {}
    counts: dict[tuple[str, str], int] = {}

    def add(key, total, n):
        sums[key] = sums.get(key, 0.0) + float(total)
        counts[key] = counts.get(key, 0) + n

    cont_stats = cont_stats or {}
    with no_grad():
        for s in range(0, len(idx), batch):
            b = idx[s:s + batch]
            out = _forward(model, ds, b)
            for h in ds.heads:
                pred = out.events[h.name].data
                lab = ds.labels[h.name][b]
                if h.kind == "discrete":
                    add((h.name, "accuracy"), np.sum(np.argmax(pred, axis=-1) == lab), lab.size)
                else:
                    mean, std = cont_stats.get(h.name, (0.0, 1.0))
                    value = pred * np.asarray(std) + np.asarray(mean)
                    add((h.name, "mse"), np.sum((value - lab) ** 2), lab.shape[0] * lab.shape[1])
            if out.masks is not None:
                gt = model.feature_positions(ds.positions[b])
                if out.positions is not None:
                    pred_fm = model.feature_positions(out.positions.data)
                    add(("attention", "path_error_m"),
                        np.sum(np.linalg.norm(out.positions.data - ds.positions[b], axis=-1)), gt.shape[0] * gt.shape[1])
                else:
                    m = out.masks.data
                    pred_fm = mask_centroid(m.reshape((-1,) + m.shape[2:])).reshape(gt.shape)
                    p = m.reshape(m.shape[0], m.shape[1], -1)
                    ent = -np.sum(p * np.log(np.maximum(p, 1e-300)), axis=-1)
                    add(("attention", "entropy"), ent.sum(), ent.size)
                add(("attention", "fm_distance"), np.sum(np.linalg.norm(pred_fm - gt, axis=-1)), gt.shape[0] * gt.shape[1])
    return {k: sums[k] / counts[k] for k in sums}


def evaluate_accuracy(model: EventModel, ds: Dataset, idx=None, cont_stats=None) -> dict[str, float]:
    """Per-head accuracy (discrete) or MSE (continuous)."""
    res = evaluate(model, ds, idx, cont_stats)
    return {h.name: res[(h.name, "accuracy" if h.kind == "discrete" else "mse")] for h in ds.heads}


def train(ds: Dataset, model_config: ModelConfig, config: TrainConfig | None = None, seed: int = 0,
          split: tuple[np.ndarray, np.ndarray] | None = None, config_hash: str = "",
          log=None) -> TrainResult:
    """Adam on the summed sequence loss; keeps the weights of the best validation epoch.

    Everything random (split, init, batch order) derives from ``seed``.
    """
    config = config or TrainConfig()
    if tuple(ds.heads) != tuple(model_config.heads):
        raise ValueError(f"dataset heads {ds.heads} do not match model heads {model_config.heads}")
    train_idx, val_idx = split if split is not None else train_val_split(len(ds), seed, config.train_fraction)
    if len(train_idx) == 0:
        raise ValueError("training split is empty")
    primary = config.primary_head or next(h.name for h in ds.heads if h.kind == "discrete")
    model = EventModel(model_config, seed=seed)
    stats = continuous_stats(ds, train_idx)
    state = AdamState(learning_rate=config.learning_rate, weight_decay=config.decay_for(model_config.variant))
    rng = np.random.default_rng([seed, 1])
    rows: list = []
    best = (-math.inf, -1, None)

    def record(epoch, split_name, head, metric, value):
        rows.append([epoch, split_name, head, metric, float(value), seed, config_hash])

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        totals = {"total": 0.0, "disc": 0.0, "cont": 0.0, "attn": 0.0}
        nb = 0
        for s in range(0, len(order), config.batch_size):
            b = order[s:s + config.batch_size]
            for p in model.params.values():
                p.zero_grad()
            out = _forward(model, ds, b)
            labels = {h.name: ds.labels[h.name][b] for h in ds.heads}
            loss, comps = compute_loss(out, ds.heads, labels, ds.positions[b], config.attn_weight, stats)
            if not all(math.isfinite(v) for v in comps.values()):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {nb}: {comps}")
            backward(loss)
            try:
                adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
            except NonFiniteGradientError as exc:
                raise TrainingDivergedError(f"non-finite gradient at epoch {epoch}, batch {nb}: {comps}") from exc
            for k in totals:
                totals[k] += comps[k]
            nb += 1
        for k, v in totals.items():
            record(epoch, "train", "loss", k, v / nb)
        if len(val_idx):
            res = evaluate(model, ds, val_idx, stats, config.eval_batch)
            for (head, metric), v in sorted(res.items()):
                record(epoch, "val", head, metric, v)
            score = res[(primary, "accuracy")]
        else:
            score = -totals["total"] / nb
        if log is not None:
            log(f"epoch {epoch}: loss {totals['total'] / nb:.4f} val {primary} {score:.4f}")
        if score > best[0]:
            best = (score, epoch, model.state_dict())
    model.load_state_dict(best[2])
    return TrainResult(model, stats, best[1], best[0], rows, train_idx, val_idx)


def write_metrics_csv(path_or_buf, rows, append: bool = False) -> None:
    if isinstance(path_or_buf, io.TextIOBase):
        w = csv.writer(path_or_buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        w.writerows(rows)
        return
    path = Path(path_or_buf)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(METRIC_COLUMNS)
        w.writerows(rows)


def save_trained(path, result: TrainResult, meta: dict | None = None) -> None:
    m = dict(meta or {})
    m.update({"cont_stats": result.cont_stats, "best_epoch": result.best_epoch, "best_score": result.best_score})
    result.model.save(path, m)


def load_trained(path) -> tuple[EventModel, dict]:
    model, meta = EventModel.load(path)
    return model, meta
