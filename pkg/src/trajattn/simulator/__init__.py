from .collect import ExplorationParams, collect_offpolicy, event_labels, heads_for, ou_actions, random_start
from .episode import (
    EPISODE_COLUMNS, EpisodeRecord, RandomSteering, run_episode, shared_starts, terrain_score, write_episode_csv,
)
from .dynamics import VehicleParams, VehicleState, robot_frame_positions, rollout, step_dynamics, wrap_angle
from .render import Render, read_ppm, render_observation, write_ppm
from .world import WorldFormatError, WorldParams, WorldSpec, generate_world, swap_terrain

__all__ = [
    "EPISODE_COLUMNS", "EpisodeRecord", "RandomSteering", "run_episode", "shared_starts", "terrain_score",
    "write_episode_csv",
    "ExplorationParams", "collect_offpolicy", "event_labels", "heads_for", "ou_actions", "random_start",
    "VehicleParams", "VehicleState", "robot_frame_positions", "rollout", "step_dynamics", "wrap_angle",
    "Render", "read_ppm", "render_observation", "write_ppm",
    "WorldFormatError", "WorldParams", "WorldSpec", "generate_world", "swap_terrain",
]
