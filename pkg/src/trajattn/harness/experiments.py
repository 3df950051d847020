"""Experiment pipelines shared by the command line and the acceptance suite.

Toy pipeline: one training world and its terrain-swapped twin, one dataset
from each, then every (seed, variant) pair trains on the first dataset and is
scored on the validation split and on the second dataset.

On-policy pipeline: procedural training and test worlds, closed-loop episodes
from shared start states with either a receding-horizon planner or random
steering.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from ..autodiff import no_grad
from ..model import EventModel
from ..planner import CEMPlanner
from ..simulator import (
    RandomSteering, WorldSpec, collect_offpolicy, generate_world, run_episode, shared_starts,
    swap_terrain,
)
from ..training import Dataset, TrainResult, evaluate, fraction_subset, train
from .config import ExperimentConfig

VARIANT_FLAGS = {"trajectory": "trajectory", "self": "self_attention", "none": "none"}


def worker_count() -> int:
    """Parallel worker cap from ``TRAJATTN_THREADS`` (default 1)."""
    raw = os.environ.get("TRAJATTN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TRAJATTN_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


# -- worlds and data --------------------------------------------------------
def make_worlds(cfg: ExperimentConfig, seed: int | None = None) -> tuple[WorldSpec, WorldSpec]:
    """(training world, test world). The toy test world is the training world with terrain swapped."""
    w = cfg["world"]
    seed = w["seed"] if seed is None else seed
    train_world = generate_world(seed, cfg.world_params())
    if w["mode"] == "toy":
        return train_world, swap_terrain(train_world)
    return train_world, generate_world(w["test_seed"], cfg.world_params(test=True))


def collect(cfg: ExperimentConfig, world: WorldSpec, seed: int, num_samples: int | None = None) -> Dataset:
    ds = collect_offpolicy(world, num_samples or cfg["world"]["samples"], seed, cfg["model"]["horizon"],
                           cfg.vehicle(), cfg.rig(), cfg.exploration())
    ds.meta.update({"config_hash": cfg.hash(), "seed": seed})
    return ds


def toy_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    w = cfg["world"]
    train_world, test_world = make_worlds(cfg)
    return collect(cfg, train_world, w["collect_seed"]), collect(cfg, test_world, w["test_collect_seed"])


# -- training and offline evaluation ---------------------------------------
def train_variant(cfg: ExperimentConfig, ds: Dataset, variant: str, seed: int, fraction: float | None = None,
                  log=None) -> TrainResult:
    """Train one variant; ``fraction`` < 1 trains on a seeded subset of ``ds``."""
    fraction = cfg["training"]["data_fraction"] if fraction is None else fraction
    if fraction < 1.0:
        ds = ds.subset(fraction_subset(len(ds), fraction, seed))
    return train(ds, cfg.model_config(ds.heads, variant), cfg.train_config(), seed=seed,
                 config_hash=cfg.hash(), log=log)


@dataclass
class ToyRow:
    seed: int
    variant: str
    fraction: float
    best_epoch: int
    val_accuracy: float
    test_accuracy: float
    val_fm_distance: float
    test_fm_distance: float


def _toy_job(args) -> ToyRow:
    text, seed, variant, fraction, train_ds, test_ds = args
    cfg = ExperimentConfig.loads(text)
    used = train_ds if fraction >= 1.0 else train_ds.subset(fraction_subset(len(train_ds), fraction, seed))
    res = train_variant(cfg, used, variant, seed, 1.0)
    val = evaluate(res.model, used, res.val_idx, res.cont_stats)
    test = evaluate(res.model, test_ds, None, res.cont_stats) if test_ds is not None else {}
    nan = float("nan")
    return ToyRow(seed, variant, fraction, res.best_epoch, val[("terrain", "accuracy")],
                  test.get(("terrain", "accuracy"), nan), val.get(("attention", "fm_distance"), nan),
                  test.get(("attention", "fm_distance"), nan))


def run_toy(cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset | None, seeds, variants,
            fraction: float = 1.0, workers: int = 1) -> list[ToyRow]:
    """Every (seed, variant) pair; results are in input order whatever the worker count."""
    jobs = [(cfg.dumps(), s, v, fraction, train_ds, test_ds) for s in seeds for v in variants]
    if workers <= 1:
        return [_toy_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_toy_job, jobs))


def _mean_std(xs) -> str:
    xs = np.asarray(xs, dtype=np.float64)
    return f"{100 * xs.mean():.1f} ± {100 * xs.std():.1f}"


def toy_summary(rows: list[ToyRow]) -> str:
    """Accuracy (%) per variant in the training and test environments, mean ± std over seeds."""
    variants = list(dict.fromkeys(r.variant for r in rows))
    seeds = sorted({r.seed for r in rows})
    lines = [f"terrain accuracy (%), {len(seeds)} seeds", f"{'variant':<16}{'train env':>16}{'test env':>16}"]
    for v in variants:
        rs = [r for r in rows if r.variant == v]
        lines.append(f"{v:<16}{_mean_std([r.val_accuracy for r in rs]):>16}{_mean_std([r.test_accuracy for r in rs]):>16}")
    return "\n".join(lines)


TOY_COLUMNS = ["seed", "variant", "fraction", "best_epoch", "val_accuracy", "test_accuracy", "val_fm_distance",
               "test_fm_distance", "config_hash"]


def toy_csv_rows(rows: list[ToyRow], config_hash: str) -> list[list]:
    return [[r.seed, r.variant, r.fraction, r.best_epoch, r.val_accuracy, r.test_accuracy, r.val_fm_distance,
             r.test_fm_distance, config_hash] for r in rows]


# -- on-policy ------------------------------------------------------------
def run_onpolicy(cfg: ExperimentConfig, world: WorldSpec, model: EventModel | None, cont_stats: dict | None,
                 label: str, episodes: int | None = None, duration: float | None = None) -> list[list]:
    """Episode rows (``EPISODE_COLUMNS`` order); ``model=None`` drives with random steering."""
    e = cfg["evaluation"]
    episodes = episodes or e["episodes"]
    duration = duration or e["episode_duration"]
    starts = shared_starts(world, episodes, e["start_seed"])
    rows = []
    for i, start in enumerate(starts):
        policy_seed = e["policy_seed"] * 100_003 + i
        if model is None:
            policy = RandomSteering(policy_seed)
        else:
            policy = CEMPlanner(model, cfg.plan_config(), cfg.reward_spec(world.num_classes), policy_seed, cont_stats)
        rec = run_episode(world, policy, duration, start, cfg.vehicle(), cfg.rig())
        rows.append([i, label, world.seed, e["start_seed"], rec.steps, rec.max_steps, rec.episode_return,
                     rec.completed_pct, int(rec.collided), rec.aborted, cfg.hash()])
    return rows


def onpolicy_summary(results: dict[str, dict[str, list[list]]]) -> str:
    """Mean ± std episodic return and completion per policy, training vs test world."""
    lines = [f"{'policy':<16}{'train return':>18}{'test return':>18}{'train done %':>14}{'test done %':>14}"]
    for policy, by_world in results.items():
        cells = []
        for key in ("train", "test"):
            rs = by_world.get(key, [])
            r = np.array([row[6] for row in rs]) if rs else np.array([np.nan])
            cells.append(f"{r.mean():.1f} ± {r.std():.1f}")
        done = []
        for key in ("train", "test"):
            rs = by_world.get(key, [])
            done.append(f"{np.mean([row[7] for row in rs]):.1f}" if rs else "nan")
        lines.append(f"{policy:<16}{cells[0]:>18}{cells[1]:>18}{done[0]:>14}{done[1]:>14}")
    return "\n".join(lines)


# -- attention overlays ---------------------------------------------------
def upsample_bilinear(mask: np.ndarray, stride: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Sample a feature-map mask at every image pixel centre (pixel p sits at feature coordinate p / stride)."""
    h, w = out_hw
    rows, cols = np.meshgrid(np.arange(h) / stride, np.arange(w) / stride, indexing="ij")
    return map_coordinates(mask, [rows, cols], order=1, mode="nearest")


def attention_overlay(model: EventModel, image: np.ndarray, actions: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Masks of every timestep, summed and scaled to [0, 1], upsampled and blended in red over the frame.

    ``image`` is (3, H, W) in [0, 1]; returns the same shape.
    """
    if model.config.variant == "none":
        raise ValueError("the 'none' variant has no attention masks to export")
    with no_grad():
        out = model.forward_full(np.asarray(image, dtype=np.float64)[None], np.asarray(actions)[None])
    total = out.masks.data[0].sum(axis=0)
    peak = total.max()
    heat = total / peak if peak > 0 else total
    up = upsample_bilinear(heat, model.config.geometry.s_out, image.shape[1:])
    red = np.zeros_like(image)
    red[0] = 1.0
    layer = up[None] * red + (1.0 - up[None]) * image
    return (1.0 - alpha) * image + alpha * layer
