"""Kinematic bicycle at constant speed.

The action is a normalised steering command in [-1, 1]; the steering angle is
``action * max_steer``. Steering is held for the whole step and the motion is
integrated exactly: a straight segment of length v*dt for zero steering,
otherwise an arc of radius L / tan(delta). A step that would end inside an
obstacle or past the world edge leaves the state where it was and sets
``collided``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..geometry import PoseSE3


@dataclass(frozen=True)
class VehicleParams:
    speed: float = 6.9
    wheelbase: float = 2.5
    max_steer: float = 0.3  # rad
    dt: float = 1.0 / 6.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    collided: bool = False

    def pose(self) -> PoseSE3:
        return PoseSE3.from_planar(self.x, self.y, self.heading)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def step_dynamics(state: VehicleState, action: float, params: VehicleParams, world=None) -> VehicleState:
    if state.collided:
        return state
    a = float(np.clip(action, -1.0, 1.0))
    delta = a * params.max_steer
    dist = params.speed * params.dt
    curvature = math.tan(delta) / params.wheelbase
    turn = dist * curvature
    heading = state.heading + turn
    # the chord of the arc points along the mid-step heading
    half = 0.5 * turn
    chord = dist if half == 0.0 else dist * math.sin(half) / half
    x = state.x + chord * math.cos(state.heading + half)
    y = state.y + chord * math.sin(state.heading + half)
    if world is not None and world.collides(x, y):
        return replace(state, collided=True)
    return VehicleState(x, y, wrap_angle(heading))


def rollout(state: VehicleState, actions, params: VehicleParams, world=None) -> list[VehicleState]:
    out = []
    for a in np.asarray(actions, dtype=np.float64).reshape(len(actions), -1)[:, 0]:
        state = step_dynamics(state, a, params, world)
        out.append(state)
    return out


def robot_frame_positions(start: VehicleState, states) -> np.ndarray:
    """Planar positions of ``states`` expressed in the robot frame at ``start``, (n, 2)."""
    c, s = math.cos(start.heading), math.sin(start.heading)
    d = np.array([[st.x - start.x, st.y - start.y] for st in states]).reshape(-1, 2)
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])
