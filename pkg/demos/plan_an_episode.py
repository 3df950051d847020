"""Closing the loop: drive a procedural world with a learned event model.

A model trained on off-policy driving predicts terrain, collision and
displacement along any candidate steering sequence. The cross-entropy planner
scores many candidates from one camera frame, drives the best first action
and re-plans every step. Random steering is the point of comparison.

Training here is short and the planner small, so expect noisy numbers. The
acceptance suite runs the full 30-episode comparison.

    python3 demos/plan_an_episode.py
"""

import numpy as np

from trajattn.harness import ExperimentConfig, make_worlds, run_onpolicy
from trajattn.harness.experiments import collect, train_variant

cfg = ExperimentConfig().with_overrides(
    world={"mode": "procedural", "samples": 2000},
    training={"epochs": 8},
    planner={"num_samples": 128, "num_elites": 4},
    evaluation={"episodes": 4, "episode_duration": 10.0},
)
train_world, test_world = make_worlds(cfg)
ds = collect(cfg, train_world, seed=1)
labels = ds.labels["collision"]
print(f"{len(ds)} frames, collisions in {100 * labels.any(axis=1).mean():.0f}% of the 2 s windows")

res = train_variant(cfg, ds, "trajectory", seed=0)
print(f"trained for {len(res.metric('train', 'loss', 'total'))} epochs, best validation terrain accuracy "
      f"{100 * res.best_score:.1f}%")

for name, world in (("training world", train_world), ("test world", test_world)):
    planned = run_onpolicy(cfg, world, res.model, res.cont_stats, "trajectory")
    random = run_onpolicy(cfg, world, None, None, "random")
    p, r = np.mean([row[6] for row in planned]), np.mean([row[6] for row in random])
    print(f"{name:<15} planner return {p:6.1f}   random steering {r:6.1f}")
