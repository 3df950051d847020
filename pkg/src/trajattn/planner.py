"""Cross-entropy-method action planning over predicted event rewards."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import no_grad
from .model import EventHeadSpec, EventModel


@dataclass(frozen=True)
class PlanConfig:
    num_samples: int = 2048
    num_elites: int = 64
    iterations: int = 2
    horizon: int = 12
    action_dim: int = 1
    low: float = -1.0
    high: float = 1.0
    init_mean: float = 0.0
    init_var: float | None = None  # None: (range / 2)^2
    var_floor: float = 1e-3
    max_rejections: int = 16
    warm_start: bool = True

    def __post_init__(self):
        if not 1 <= self.num_elites <= self.num_samples:
            raise ValueError("need 1 <= num_elites <= num_samples")
        if self.iterations < 1 or self.horizon < 1:
            raise ValueError("iterations and horizon must be >= 1")
        if self.var_floor <= 0:
            raise ValueError("var_floor must be positive")
        if not self.low < self.high:
            raise ValueError("low must be below high")

    @property
    def initial_var(self) -> float:
        return ((self.high - self.low) / 2.0) ** 2 if self.init_var is None else self.init_var


@dataclass
class ActionDistribution:
    mean: np.ndarray  # (H, A)
    var: np.ndarray  # (H, A)

    @classmethod
    def initial(cls, cfg: PlanConfig) -> "ActionDistribution":
        shape = (cfg.horizon, cfg.action_dim)
        return cls(np.full(shape, float(np.clip(cfg.init_mean, cfg.low, cfg.high))), np.full(shape, cfg.initial_var))

    def shifted(self, cfg: PlanConfig) -> "ActionDistribution":
        """Drop the executed first step; append a fresh initial step; reset variance."""
        mean = np.concatenate([self.mean[1:], np.full((1, cfg.action_dim), cfg.init_mean)])
        return ActionDistribution(mean, np.full_like(self.var, cfg.initial_var))


@dataclass(frozen=True)
class RewardSpec:
    selector: str = "turbulence_collision"  # or goal_directed
    num_terrain: int = 3
    goal: tuple[float, float] = (1.0, 0.0)
    terrain_value: str = "expectation"  # or argmax

    def __post_init__(self):
        if self.selector not in ("turbulence_collision", "goal_directed"):
            raise ValueError(f"unknown reward selector {self.selector!r}")
        if self.selector == "goal_directed" and abs(float(np.hypot(*self.goal)) - 1.0) > 1e-9:
            raise ValueError("goal must be a unit vector")
        if self.terrain_value not in ("expectation", "argmax"):
            raise ValueError("terrain_value must be expectation or argmax")

    @property
    def required_heads(self) -> tuple[str, ...]:
        return ("terrain", "collision") if self.selector == "turbulence_collision" else ("dpos", "collision")


def expected_event_value(output: np.ndarray, head: EventHeadSpec, stats=None) -> np.ndarray:
    """Scalar (or vector, for continuous heads) event value per step.

    Discrete heads give sum_c c * p(c), which for a binary head is the
    probability of the positive class. Continuous heads are mapped back to
    label units with ``stats = (mean, std)``.
    """
    out = np.asarray(output, dtype=np.float64)
    if head.kind == "discrete":
        return out @ np.arange(head.size, dtype=np.float64)
    if stats is None:
        return out
    mean, std = stats
    return out * np.asarray(std) + np.asarray(mean)


def reward_turbulence_collision(terrain: np.ndarray, collision: np.ndarray, num_terrain: int) -> np.ndarray:
    """``-sum_i (1 - c_i) * terr_i + c_i * num_terrain`` over the last axis."""
    terrain = np.asarray(terrain, dtype=np.float64)
    collision = np.asarray(collision, dtype=np.float64)
    return -np.sum((1.0 - collision) * terrain + collision * num_terrain, axis=-1)


def reward_goal_directed(dpos: np.ndarray, collision: np.ndarray, goal) -> np.ndarray:
    """``sum_i (1 - c_i) * (dpos_i . g) - c_i``; dpos is (..., H, 2)."""
    g = np.asarray(goal, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise ValueError("goal must be a unit vector")
    collision = np.asarray(collision, dtype=np.float64)
    return np.sum((1.0 - collision) * (np.asarray(dpos) @ g) - collision, axis=-1)


def trajectory_reward(events: dict[str, np.ndarray], heads, spec: RewardSpec, cont_stats=None) -> np.ndarray:
    """Reward per rollout from stacked head outputs (N, H, ...)."""
    by_name = {h.name: h for h in heads}
    missing = [n for n in spec.required_heads if n not in by_name]
    if missing:
        raise ValueError(f"reward {spec.selector!r} needs heads {missing}")
    coll = expected_event_value(events["collision"], by_name["collision"])
    if spec.selector == "turbulence_collision":
        head = by_name["terrain"]
        if spec.terrain_value == "argmax":
            terr = np.argmax(events["terrain"], axis=-1).astype(np.float64)
        else:
            terr = expected_event_value(events["terrain"], head)
        return reward_turbulence_collision(terr, coll, spec.num_terrain)
    dpos = expected_event_value(events["dpos"], by_name["dpos"], (cont_stats or {}).get("dpos"))
    return reward_goal_directed(dpos, coll, spec.goal)


def sample_truncated(rng: np.random.Generator, dist: ActionDistribution, n: int, low: float, high: float,
                     max_rejections: int = 16) -> np.ndarray:
    """Gaussian samples restricted to [low, high] by per-entry rejection, clamped as a last resort."""
    std = np.sqrt(dist.var)
    x = dist.mean + std * rng.standard_normal((n,) + dist.mean.shape)
    for _ in range(max_rejections):
        bad = (x < low) | (x > high)
        if not bad.any():
            break
        redraw = dist.mean + std * rng.standard_normal(x.shape)
        x = np.where(bad, redraw, x)
    return np.clip(x, low, high)


@dataclass
class CEMResult:
    actions: np.ndarray  # (H, A) best rollout seen
    reward: float
    distribution: ActionDistribution
    diagnostics: list = field(default_factory=list)  # dicts: iteration, elite_mean_reward, best_reward


def refit(samples: np.ndarray, rewards: np.ndarray, cfg: PlanConfig) -> tuple[ActionDistribution, np.ndarray]:
    """Moment-match the top ``num_elites`` samples; ties keep the lower sample index."""
    order = np.argsort(-rewards, kind="stable")
    elite = order[:cfg.num_elites]
    e = samples[elite]
    mean = np.clip(e.mean(axis=0), cfg.low, cfg.high)
    var = np.maximum(e.var(axis=0), cfg.var_floor)
    return ActionDistribution(mean, var), elite


def cem_optimize(score_fn: Callable[[np.ndarray], np.ndarray], cfg: PlanConfig, rng: np.random.Generator,
                 init: ActionDistribution | None = None) -> CEMResult:
    """Maximise ``score_fn`` over (N, H, A) batches of action sequences."""
    dist = init or ActionDistribution.initial(cfg)
    best_a, best_r = None, -np.inf
    diags = []
    for it in range(cfg.iterations):
        samples = sample_truncated(rng, dist, cfg.num_samples, cfg.low, cfg.high, cfg.max_rejections)
        rewards = np.asarray(score_fn(samples), dtype=np.float64)
        if rewards.shape != (cfg.num_samples,):
            raise ValueError(f"score_fn returned shape {rewards.shape}, expected ({cfg.num_samples},)")
        dist, elite = refit(samples, rewards, cfg)
        top = elite[0]
        if rewards[top] > best_r:
            best_r, best_a = float(rewards[top]), samples[top].copy()
        diags.append({"iteration": it, "elite_mean_reward": float(rewards[elite].mean()), "best_reward": best_r})
    return CEMResult(best_a, best_r, dist, diags)


def _check_heads(model: EventModel, spec: RewardSpec) -> None:
    names = {h.name for h in model.config.heads}
    missing = [n for n in spec.required_heads if n not in names]
    if missing:
        raise ValueError(f"model lacks heads {missing} required by reward {spec.selector!r}")


def cem_plan(image: np.ndarray, model: EventModel, cfg: PlanConfig, spec: RewardSpec, seed,
             cont_stats: dict | None = None, init: ActionDistribution | None = None) -> CEMResult:
    """Plan from one observation; the image is encoded exactly once."""
    _check_heads(model, spec)
    H = model.config.horizon
    if cfg.horizon > H:
        raise ValueError(f"plan horizon {cfg.horizon} exceeds model horizon {H}")
    if cfg.action_dim != model.config.action_dim:
        raise ValueError("plan and model action dims differ")
    rng = np.random.default_rng(seed)
    with no_grad():
        img = np.asarray(image, dtype=np.float64)
        encoded = model.encode_image(img[None] if img.ndim == 3 else img)

        def score(actions: np.ndarray) -> np.ndarray:
            if cfg.horizon < H:
                pad = np.repeat(actions[:, -1:], H - cfg.horizon, axis=1)
                actions = np.concatenate([actions, pad], axis=1)
            out = model.forward_full(actions=actions, encoded=encoded)
            events = {k: v.data[:, :cfg.horizon] for k, v in out.events.items()}
            return trajectory_reward(events, model.config.heads, spec, cont_stats)

        return cem_optimize(score, cfg, rng, init)


class CEMPlanner:
    """Receding-horizon wrapper: replan every step, warm-start from the shifted solution."""

    def __init__(self, model: EventModel, cfg: PlanConfig, spec: RewardSpec, seed: int = 0,
                 cont_stats: dict | None = None):
        _check_heads(model, spec)
        self.model, self.cfg, self.spec, self.seed = model, cfg, spec, seed
        self.cont_stats = cont_stats
        self.reset()

    def reset(self) -> None:
        self.timestep = 0
        self._dist: ActionDistribution | None = None
        self.diagnostics: list[dict] = []

    def __call__(self, image: np.ndarray) -> float:
        init = self._dist.shifted(self.cfg) if (self.cfg.warm_start and self._dist is not None) else None
        res = cem_plan(image, self.model, self.cfg, self.spec, [self.seed, self.timestep], self.cont_stats, init)
        for d in res.diagnostics:
            self.diagnostics.append({"timestep": self.timestep, **d})
        self._dist = ActionDistribution(res.actions.copy(), res.distribution.var) if self.cfg.warm_start else None
        self.timestep += 1
        return float(res.actions[0, 0])


def write_plan_diagnostics(path, rows, append: bool = True) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(["timestep", "iteration", "elite_mean_reward", "best_reward"])
        for r in rows:
            w.writerow([r["timestep"], r["iteration"], r["elite_mean_reward"], r["best_reward"]])
