"""Experiment configuration: INI sections with a typed, closed schema.

Every key has a default and a one-line description (``describe()`` prints
them). Parsing rejects unknown sections and keys and reports every problem at
once. ``dumps`` writes every key, so ``loads(dumps(c)) == c``.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..geometry import CameraRig
from ..model import ConvSpec, ModelConfig
from ..planner import PlanConfig, RewardSpec
from ..simulator import ExplorationParams, VehicleParams, WorldParams
from ..training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*options):
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"{v!r} not in {list(options)}")
        return v
    return parse


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _convs(s: str) -> tuple[tuple[int, int, int], ...]:
    """``3x8/2, 3x16/2`` -> ((3, 8, 2), (3, 16, 2)): kernel x channels / stride."""
    out = []
    for item in s.split(","):
        k, rest = item.strip().split("x")
        c, st = rest.split("/")
        out.append((int(k), int(c), int(st)))
    return tuple(out)


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() == "auto" else float(s)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "auto"
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return ", ".join(f"{k}x{c}/{s}" for k, c, s in v)
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


# section -> key -> (parser, default, description)
SCHEMA: dict[str, dict[str, tuple]] = {
    "world": {
        "mode": (_choice("toy", "procedural"), "toy", "toy: swapped-terrain confound; procedural: 3 classes + obstacles"),
        "seed": (int, 0, "training world seed"),
        "test_seed": (int, 1, "procedural test world seed (toy test world = training world with terrain swapped)"),
        "toy_extent": (float, 64.0, "toy world side, m"),
        "toy_block_size": (float, 16.0, "toy terrain block side, m"),
        "procedural_extent": (float, 128.0, "procedural world side, m"),
        "procedural_classes": (int, 3, "roughness classes in procedural worlds"),
        "obstacle_count": (int, 60, "procedural obstacle budget"),
        "obstacle_spacing": (float, 10.0, "minimum obstacle centre distance, m"),
        "canopy_height": (float, 5.0, "height of the background canopy plane, m"),
        "wall_height": (float, 2.0, "boundary wall height, m"),
        "confound": (_bool, True, "background colour follows terrain class"),
        "speed": (float, 6.9, "vehicle speed, m/s"),
        "wheelbase": (float, 2.5, "m"),
        "max_steer": (float, 0.3, "steering angle at action 1.0, rad"),
        "dt": (float, 1.0 / 6.0, "control period, s"),
        "camera_height": (float, CameraRig.height, "m above ground"),
        "camera_pitch_deg": (float, CameraRig.pitch_deg, "negative looks down"),
        "camera_hfov_deg": (float, CameraRig.hfov_deg, "horizontal field of view"),
        "image_size": (int, 32, "square image side, px"),
        "samples": (int, 6000, "off-policy samples per environment"),
        "collect_seed": (int, 1, "exploration seed for the training environment"),
        "test_collect_seed": (int, 2, "exploration seed for the test environment"),
        "exploration_theta": (float, 0.5, "OU mean reversion, 1/s"),
        "exploration_sigma": (float, 0.4, "OU stationary std, normalised steering"),
        "max_episode_steps": (int, 120, "exploration episode cap"),
    },
    "model": {
        "variant": (_choice("trajectory", "self_attention", "none"), "trajectory", "attention variant"),
        "horizon": (int, 12, "prediction horizon H"),
        "convs": (_convs, ((3, 8, 2), (3, 16, 2)), "encoder layers, kernel x channels / stride"),
        "hidden": (int, 64, "LSTM hidden size"),
        "action_embed": (int, 16, "action embedding width"),
        "covariance": (_choice("isotropic", "diagonal", "full"), "isotropic", "attention mask covariance"),
        "init_sigma": (float, 1.5, "initial mask std, feature cells"),
    },
    "training": {
        "epochs": (int, 30, ""),
        "batch_size": (int, 32, ""),
        "learning_rate": (float, 1e-3, "Adam step size"),
        "weight_decay": (_opt_float, None, "L2 factor; auto = 1e-4 with attention, 5e-4 without"),
        "attn_weight": (float, 1.0, "weight of the attention-path loss (ablation only)"),
        "train_fraction": (float, 0.8, "train share of the train/validation split"),
        "data_fraction": (float, 1.0, "share of the collected data used at all"),
    },
    "planner": {
        "num_samples": (int, 2048, "rollouts per CEM iteration"),
        "num_elites": (int, 64, "elite count"),
        "iterations": (int, 2, "CEM iterations per timestep"),
        "var_floor": (float, 1e-3, "per-dimension variance floor"),
        "warm_start": (_bool, True, "shift the previous solution into the next timestep"),
        "reward": (_choice("turbulence_collision", "goal_directed"), "turbulence_collision", "reward function"),
        "terrain_value": (_choice("expectation", "argmax"), "expectation", "terrain event value"),
        "goal_x": (float, 1.0, "goal unit vector, robot frame"),
        "goal_y": (float, 0.0, ""),
    },
    "evaluation": {
        "episodes": (int, 30, "on-policy episodes per world"),
        "episode_duration": (float, 30.0, "s"),
        "start_seed": (int, 0, "seed for the shared start states"),
        "policy_seed": (int, 0, "seed for planner sampling and random steering"),
    },
    "experiment": {
        "seeds": (_int_list, (0, 1, 2, 3, 4, 5), "seeds for reproduce-toy"),
        "variants": (lambda s: tuple(_choice("trajectory", "self_attention", "none")(x) for x in s.replace(",", " ").split()),
                     ("trajectory", "self_attention", "none"), "variants compared by reproduce-toy"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict[str, dict] = field(default_factory=lambda: {s: {k: v[1] for k, v in keys.items()}
                                                             for s, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.dumps() == other.dumps()

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """``cfg.with_overrides(model={"variant": "none"})``; keys are validated."""
        problems = []
        vals = {s: dict(v) for s, v in self.values.items()}
        for s, kv in sections.items():
            if s not in SCHEMA:
                problems.append(f"unknown section [{s}]")
                continue
            for k, v in kv.items():
                if k not in SCHEMA[s]:
                    problems.append(f"unknown key [{s}] {k}")
                else:
                    vals[s][k] = v
        if problems:
            raise ConfigError(problems)
        return ExperimentConfig(vals)

    # -- text form ---------------------------------------------------------
    def dumps(self) -> str:
        lines = []
        for s, keys in SCHEMA.items():
            lines.append(f"[{s}]")
            for k in keys:
                lines.append(f"{k} = {_fmt(self.values[s][k])}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str  # keep key case so typos are reported verbatim
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError([str(exc)]) from exc
        cfg = cls()
        problems = []
        for s in cp.sections():
            if s not in SCHEMA:
                problems.append(f"unknown section [{s}]")
                continue
            for k, raw in cp.items(s):
                if k not in SCHEMA[s]:
                    problems.append(f"unknown key [{s}] {k}")
                    continue
                try:
                    cfg.values[s][k] = SCHEMA[s][k][0](raw)
                except (ValueError, TypeError) as exc:
                    problems.append(f"bad value [{s}] {k} = {raw!r}: {exc}")
        problems += cfg.check()
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.loads(p.read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16]

    def check(self) -> list[str]:
        w, m, t, p = self["world"], self["model"], self["training"], self["planner"]
        out = []
        positive = [("world", "speed"), ("world", "wheelbase"), ("world", "dt"), ("world", "max_steer"),
                    ("model", "horizon"), ("model", "hidden"), ("training", "epochs"), ("training", "batch_size"),
                    ("training", "learning_rate"), ("planner", "num_samples"), ("planner", "iterations"),
                    ("planner", "var_floor"), ("evaluation", "episodes"), ("world", "samples")]
        for s, k in positive:
            if not self[s][k] > 0:
                out.append(f"[{s}] {k} must be positive")
        if not 1 <= p["num_elites"] <= p["num_samples"]:
            out.append("[planner] num_elites must be in 1..num_samples")
        if not 0 < t["data_fraction"] <= 1 or not 0 < t["train_fraction"] <= 1:
            out.append("[training] fractions must be in (0, 1]")
        if p["reward"] == "goal_directed" and abs(math.hypot(p["goal_x"], p["goal_y"]) - 1) > 1e-9:
            out.append("[planner] goal_x, goal_y must form a unit vector")
        if w["procedural_classes"] not in (2, 3):
            out.append("[world] procedural_classes must be 2 or 3")
        for k, c, s in m["convs"]:
            if k % 2 == 0:
                out.append(f"[model] convs: kernel {k} must be odd")
        return out

    # -- typed views -------------------------------------------------------
    def world_params(self, test: bool = False) -> WorldParams:
        w = self["world"]
        common = dict(canopy_height=w["canopy_height"], wall_height=w["wall_height"], confound=w["confound"])
        if w["mode"] == "toy":
            return WorldParams(extent=w["toy_extent"], block_size=w["toy_block_size"], **common)
        return WorldParams.procedural(extent=w["procedural_extent"], num_classes=w["procedural_classes"],
                                      obstacle_count=w["obstacle_count"], obstacle_spacing=w["obstacle_spacing"],
                                      palette="test" if test else "train", **common)

    def vehicle(self) -> VehicleParams:
        w = self["world"]
        return VehicleParams(w["speed"], w["wheelbase"], w["max_steer"], w["dt"])

    def rig(self) -> CameraRig:
        w = self["world"]
        return CameraRig(w["camera_height"], w["camera_pitch_deg"], w["camera_hfov_deg"], w["image_size"], w["image_size"])

    def exploration(self) -> ExplorationParams:
        w = self["world"]
        return ExplorationParams(w["exploration_theta"], w["exploration_sigma"], w["max_episode_steps"])

    def model_config(self, heads, variant: str | None = None) -> ModelConfig:
        m = self["model"]
        n = self["world"]["image_size"]
        w = self["world"]
        return ModelConfig(variant=variant or m["variant"], horizon=m["horizon"], image_h=n, image_w=n,
                           convs=tuple(ConvSpec(*c) for c in m["convs"]), hidden=m["hidden"],
                           action_embed=m["action_embed"], heads=tuple(heads), covariance=m["covariance"],
                           camera=self.rig(), position_scale=w["speed"] * w["dt"], init_sigma=m["init_sigma"])

    def train_config(self) -> TrainConfig:
        t = self["training"]
        return TrainConfig(t["epochs"], t["batch_size"], t["learning_rate"], t["weight_decay"], t["attn_weight"],
                           t["train_fraction"])

    def plan_config(self, horizon: int | None = None) -> PlanConfig:
        p = self["planner"]
        return PlanConfig(p["num_samples"], p["num_elites"], p["iterations"], horizon or self["model"]["horizon"],
                          var_floor=p["var_floor"], warm_start=p["warm_start"])

    def reward_spec(self, num_terrain: int) -> RewardSpec:
        p = self["planner"]
        return RewardSpec(p["reward"], num_terrain, (p["goal_x"], p["goal_y"]), p["terrain_value"])


def describe() -> str:
    """Every key with its default and meaning, as a loadable config file."""
    lines = []
    for s, keys in SCHEMA.items():
        lines.append(f"[{s}]")
        for k, (_, default, doc) in keys.items():
            if doc:
                lines.append(f"; {doc}")
            lines.append(f"{k} = {_fmt(default)}")
        lines.append("")
    return "\n".join(lines)
