"""Off-policy data collection with Ornstein-Uhlenbeck steering noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import CameraRig
from ..model import EventHeadSpec
from ..training.data import Dataset
from .dynamics import VehicleParams, VehicleState, robot_frame_positions, step_dynamics
from .render import render_observation
from .world import WorldSpec


@dataclass(frozen=True)
class ExplorationParams:
    theta: float = 0.5  # mean reversion, 1/s
    sigma: float = 0.4  # stationary std in normalised steering units
    max_steps: int = 120


def heads_for(world: WorldSpec, with_collision: bool | None = None) -> tuple[EventHeadSpec, ...]:
    """Toy worlds label terrain only; procedural worlds add collision and displacement."""
    coll = world.params.mode == "procedural" if with_collision is None else with_collision
    heads = [EventHeadSpec("terrain", "discrete", world.num_classes)]
    if coll:
        heads += [EventHeadSpec("collision", "discrete", 2), EventHeadSpec("dpos", "continuous", 2)]
    return tuple(heads)


def random_start(world: WorldSpec, rng: np.random.Generator) -> VehicleState:
    cells = world.free_start_cells()
    if len(cells) == 0:
        raise ValueError("world has no traversable start cell")
    x, y = cells[rng.integers(len(cells))]
    jitter = rng.uniform(-0.4, 0.4, size=2) * world.params.cell_size
    return VehicleState(float(x + jitter[0]), float(y + jitter[1]), float(rng.uniform(-math.pi, math.pi)))


def ou_actions(rng: np.random.Generator, n: int, dt: float, params: ExplorationParams, a0: float = 0.0) -> np.ndarray:
    out = np.empty(n)
    a = a0
    for i in range(n):
        a = a - params.theta * a * dt + params.sigma * math.sqrt(2.0 * params.theta * dt) * rng.normal()
        a = min(1.0, max(-1.0, a))
        out[i] = a
    return out


def event_labels(world: WorldSpec, start: VehicleState, future: list[VehicleState]) -> dict[str, np.ndarray]:
    """Per-step terrain class, sticky collision flag and displacement in the start frame."""
    xs = np.array([s.x for s in future])
    ys = np.array([s.y for s in future])
    pos = robot_frame_positions(start, future)
    prev = np.vstack([[0.0, 0.0], pos[:-1]])
    return {
        "terrain": world.terrain_at(xs, ys).astype(np.int64),
        "collision": np.array([s.collided for s in future], dtype=np.int64),
        "dpos": pos - prev,
        "positions": pos,
    }


def collect_offpolicy(world: WorldSpec, num_samples: int, seed: int, horizon: int = 12,
                      vehicle: VehicleParams | None = None, rig: CameraRig | None = None,
                      exploration: ExplorationParams | None = None, heads=None) -> Dataset:
    vehicle = vehicle or VehicleParams()
    rig = rig or CameraRig()
    exploration = exploration or ExplorationParams()
    heads = tuple(heads or heads_for(world))
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    if len(world.free_start_cells()) == 0:
        raise ValueError("world has no traversable start cell")
    rng = np.random.default_rng(seed)
    cols = {k: [] for k in ("img", "act", "pos", "ep", "ts", "pose")}
    labels = {h.name: [] for h in heads}
    episode = 0
    while len(cols["img"]) < num_samples:
        state = random_start(world, rng)
        actions = ou_actions(rng, exploration.max_steps + horizon, vehicle.dt, exploration)
        states = [state]
        for k in range(exploration.max_steps + horizon):
            states.append(step_dynamics(states[-1], actions[k], vehicle, world))
            if states[-1].collided and len(states) - 1 - _first_collision(states) >= horizon:
                break
        for t in range(len(states) - horizon):
            if states[t].collided or len(cols["img"]) >= num_samples:
                break
            future = states[t + 1:t + 1 + horizon]
            lab = event_labels(world, states[t], future)
            cols["img"].append(render_observation(world, states[t], rig).to_uint8())
            cols["act"].append(actions[t:t + horizon].reshape(horizon, 1))
            cols["pos"].append(lab["positions"])
            cols["ep"].append(episode)
            cols["ts"].append(t)
            cols["pose"].append((states[t].x, states[t].y, states[t].heading))
            for h in heads:
                labels[h.name].append(lab[h.name])
        episode += 1
    return Dataset(heads, np.stack(cols["img"]), np.stack(cols["act"]),
                   {k: np.stack(v) for k, v in labels.items()}, np.stack(cols["pos"]),
                   np.array(cols["ep"], dtype=np.int64), np.array(cols["ts"], dtype=np.int64),
                   np.array(cols["pose"], dtype=np.float64), {"world_seed": world.seed, "swapped": world.swapped, "collect_seed": seed})


def _first_collision(states) -> int:
    for i, s in enumerate(states):
        if s.collided:
            return i
    return len(states)
