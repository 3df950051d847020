"""Why attending along the planned path helps when the background lies.

In the toy world the sky colour matches the terrain block the car starts in,
so a model can score well by looking at the sky. The test world swaps the
terrain under the same sky. This script trains the trajectory-attention model
and the no-attention model on a small dataset from the training world and
scores both in each world, then writes an attention overlay for one frame.

Runs in a few minutes on one core. Use ``trajattn reproduce-toy`` for the
full-size multi-seed table.

    python3 demos/toy_generalisation.py [output_dir]
"""

import sys
from pathlib import Path

from trajattn.harness import ExperimentConfig, attention_overlay, toy_datasets
from trajattn.harness.experiments import train_variant
from trajattn.simulator import write_ppm
from trajattn.training import evaluate

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)

cfg = ExperimentConfig().with_overrides(world={"samples": 1500}, training={"epochs": 8})
train_ds, test_ds = toy_datasets(cfg)
print(f"collected {len(train_ds)} frames in the training world and {len(test_ds)} in the swapped world")

models = {}
for variant in ("trajectory", "none"):
    res = train_variant(cfg, train_ds, variant, seed=0)
    models[variant] = res
    val = evaluate(res.model, train_ds, res.val_idx, res.cont_stats)[("terrain", "accuracy")]
    test = evaluate(res.model, test_ds, None, res.cont_stats)[("terrain", "accuracy")]
    print(f"{variant:<12} training world {100 * val:5.1f}%   swapped world {100 * test:5.1f}%")

# The no-attention model tends to hold up in the training world and collapse in the swapped one.
# The trajectory model looks where the wheels will go, so the swapped sky misleads it less.
frame = test_ds.float_images([0])[0]
overlay = attention_overlay(models["trajectory"].model, frame, test_ds.actions[0])
write_ppm(out / "frame.ppm", frame, "swapped-world frame")
write_ppm(out / "attention.ppm", overlay, "trajectory attention, all steps summed")
print(f"wrote {out / 'frame.ppm'} and {out / 'attention.ppm'}")
