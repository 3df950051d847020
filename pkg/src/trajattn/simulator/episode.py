"""Closed-loop episodes: render, choose a steering command, step, repeat."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..geometry import CameraRig
from .collect import random_start
from .dynamics import VehicleParams, VehicleState, step_dynamics
from .render import render_observation
from .world import WorldSpec

EPISODE_COLUMNS = ["episode", "policy", "world_seed", "start_seed", "steps", "max_steps", "return",
                   "completed_pct", "collided", "aborted", "config_hash"]


@dataclass
class EpisodeRecord:
    episode_return: float
    steps: int
    max_steps: int
    collided: bool
    path: np.ndarray  # (steps + 1, 3) x, y, heading
    actions: np.ndarray
    aborted: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def completed_pct(self) -> float:
        return 100.0 * self.steps / self.max_steps


def terrain_score(world: WorldSpec, x: float, y: float) -> float:
    """+K on the smoothest class down to +1 on the roughest."""
    return float(world.num_classes - int(world.terrain_at(x, y)))


def shared_starts(world: WorldSpec, count: int, seed: int) -> list[VehicleState]:
    """Start states drawn once per (world, seed) and reused by every policy compared."""
    rng = np.random.default_rng([seed, world.seed])
    return [random_start(world, rng) for _ in range(count)]


class RandomSteering:
    """Uniform random steering command each step."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, image) -> float:
        return float(self.rng.uniform(-1.0, 1.0))


def run_episode(world: WorldSpec, policy: Callable[[np.ndarray], float], duration: float,
                start: VehicleState, vehicle: VehicleParams | None = None,
                rig: CameraRig | None = None) -> EpisodeRecord:
    """Run until collision or ``duration`` seconds. Only the first planned action is applied each step.

    A policy exception aborts the episode; the record keeps what happened so far.
    """
    vehicle = vehicle or VehicleParams()
    rig = rig or CameraRig()
    max_steps = int(round(duration / vehicle.dt))
    state = start
    path = [(state.x, state.y, state.heading)]
    actions = []
    ret = 0.0
    aborted = ""
    for _ in range(max_steps):
        image = render_observation(world, state, rig).to_uint8().astype(np.float64) / 255.0
        try:
            a = float(policy(image))
        except Exception as exc:  # recorded, not raised: one bad episode must not sink an evaluation
            aborted = f"{type(exc).__name__}: {exc}"
            break
        state = step_dynamics(state, a, vehicle, world)
        actions.append(a)
        if state.collided:
            break
        ret += terrain_score(world, state.x, state.y)
        path.append((state.x, state.y, state.heading))
    steps = len(path) - 1
    return EpisodeRecord(ret, steps, max_steps, state.collided, np.array(path), np.array(actions), aborted)


def write_episode_csv(path, rows, append: bool = True) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(EPISODE_COLUMNS)
        w.writerows(rows)
