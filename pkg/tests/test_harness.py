import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajattn.harness import (
    SCHEMA, ConfigError, ExperimentConfig, attention_overlay, describe, run_toy, toy_datasets, toy_summary,
    upsample_bilinear, worker_count,
)
from trajattn.harness.cli import main
from trajattn.model import EventHeadSpec, EventModel
from trajattn.simulator import WorldSpec, generate_world, read_ppm
from trajattn.training import Dataset

TINY = """
[world]
samples = 120
[training]
epochs = 1
[planner]
num_samples = 32
num_elites = 4
[evaluation]
episodes = 2
episode_duration = 1.0
[experiment]
seeds = 0, 1
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


class TestConfig:
    def test_defaults_round_trip(self):
        c = ExperimentConfig()
        assert ExperimentConfig.loads(c.dumps()) == c
        assert ExperimentConfig.loads(describe()) == c

    def test_every_key_documented_with_default(self):
        for section, keys in SCHEMA.items():
            for key, (parse, default, doc) in keys.items():
                assert ExperimentConfig()[section][key] == default

    @settings(max_examples=40, deadline=None)
    @given(lr=st.floats(1e-6, 1.0), epochs=st.integers(1, 500), warm=st.booleans(),
           seeds=st.lists(st.integers(0, 10_000), min_size=1, max_size=6),
           decay=st.one_of(st.none(), st.floats(0.0, 1e-2)), pitch=st.floats(-60.0, -1.0))
    def test_round_trip_property(self, lr, epochs, warm, seeds, decay, pitch):
        c = ExperimentConfig().with_overrides(
            training={"learning_rate": lr, "epochs": epochs, "weight_decay": decay},
            planner={"warm_start": warm}, experiment={"seeds": tuple(seeds)}, world={"camera_pitch_deg": pitch})
        back = ExperimentConfig.loads(c.dumps())
        assert back == c and back["training"]["learning_rate"] == lr and back.hash() == c.hash()

    def test_unknown_keys_all_listed(self):
        text = "[world]\nsed = 1\n[modle]\nx = 1\n[training]\nepoch = 3\nlearning_rate = fast\n"
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.loads(text)
        msg = str(exc.value)
        for part in ("[world] sed", "[modle]", "[training] epoch", "learning_rate"):
            assert part in msg
        assert len(exc.value.problems) == 4

    def test_semantic_checks(self):
        with pytest.raises(ConfigError, match="num_elites"):
            ExperimentConfig.loads("[planner]\nnum_samples = 10\nnum_elites = 20\n")
        with pytest.raises(ConfigError, match="unit vector"):
            ExperimentConfig.loads("[planner]\nreward = goal_directed\ngoal_x = 2\n")

    def test_overrides_fail_closed(self):
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides(model={"hiden": 3})

    def test_hash_tracks_values(self):
        a = ExperimentConfig()
        assert a.hash() == ExperimentConfig().hash()
        assert a.with_overrides(training={"epochs": 29}).hash() != a.hash()

    def test_typed_views(self):
        c = ExperimentConfig()
        mc = c.model_config(heads=())
        assert math.isclose(mc.position_scale, 6.9 / 6)
        assert mc.camera == c.rig() and mc.horizon == 12
        assert c.world_params().mode == "toy"
        proc = c.with_overrides(world={"mode": "procedural"})
        assert proc.world_params(test=True).palette == "test" and proc.world_params().palette == "train"
        assert c.train_config().decay_for("none") == 5e-4 and c.train_config().decay_for("trajectory") == 1e-4

    def test_worker_count(self, monkeypatch):
        monkeypatch.delenv("TRAJATTN_THREADS", raising=False)
        assert worker_count() == 1
        monkeypatch.setenv("TRAJATTN_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("TRAJATTN_THREADS", "many")
        with pytest.raises(ValueError):
            worker_count()


class TestOverlay:
    def test_upsample_constant_and_peak(self):
        assert np.allclose(upsample_bilinear(np.full((8, 8), 0.3), 4, (32, 32)), 0.3)
        m = np.zeros((8, 8))
        m[2, 5] = 1.0
        up = upsample_bilinear(m, 4, (32, 32))
        assert up[8, 20] == 1.0 and np.unravel_index(up.argmax(), up.shape) == (8, 20)
        assert up[10, 20] == 0.5  # halfway to the next cell centre

    def test_overlay_blend(self):
        c = ExperimentConfig()
        model = EventModel(c.model_config(heads=(), variant="trajectory"), seed=0)
        img = np.random.default_rng(0).random((3, 32, 32))
        out = attention_overlay(model, img, np.zeros((12, 1)))
        assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1
        # green and blue are only ever darkened, red only ever raised
        assert np.all(out[1:] <= img[1:] + 1e-12) and np.all(out[0] >= img[0] - 1e-12)
        with pytest.raises(ValueError):
            attention_overlay(EventModel(c.model_config(heads=(), variant="none")), img, np.zeros((12, 1)))


def run(*argv):
    return main([str(a) for a in argv])


class TestCli:
    def test_pipeline_and_provenance(self, tiny, tmp_path, capsys):
        out = tmp_path
        cfg = ExperimentConfig.load(tiny)
        h = cfg.hash()
        assert run("gen-world", "--config", tiny, "--seed", 4, "--out", out / "w") == 0
        world = WorldSpec.load(out / "w" / "world_train.bin")
        assert world.meta == {"config_hash": h, "seed": 4, "role": "train"}
        assert world.same_as(generate_world(4, cfg.world_params()))
        assert run("collect", "--config", tiny, "--world", out / "w" / "world_train.bin", "--seed", 7,
                   "--out", out / "d") == 0
        ds = Dataset.load(out / "d" / "dataset.bin")
        assert len(ds) == 120 and ds.meta["config_hash"] == h and ds.meta["seed"] == 7
        for name in ("a", "b"):
            assert run("train", "--config", tiny, "--dataset", out / "d" / "dataset.bin", "--variant", "self",
                       "--seed", 2, "--out", out / name) == 0
        a, b = (out / "a" / "metrics.csv").read_bytes(), (out / "b" / "metrics.csv").read_bytes()
        assert a == b
        rows = list(csv.DictReader(open(out / "a" / "metrics.csv", encoding="utf-8")))
        assert rows and all(r["config_hash"] == h and r["seed"] == "2" for r in rows)
        model, meta = EventModel.load(out / "a" / "model.ckpt")
        assert model.config.variant == "self_attention" and meta["config_hash"] == h and meta["seed"] == 2
        assert run("eval-offline", "--config", tiny, "--checkpoint", out / "a" / "model.ckpt",
                   "--dataset", out / "d" / "dataset.bin", "--out", out / "e") == 0
        ev = list(csv.DictReader(open(out / "e" / "offline_eval.csv", encoding="utf-8")))
        assert {(r["head"], r["metric"]) for r in ev} >= {("terrain", "accuracy"), ("attention", "entropy")}
        assert run("export-attention", "--checkpoint", out / "a" / "model.ckpt", "--dataset",
                   out / "d" / "dataset.bin", "--count", 2, "--out", out / "x") == 0
        ppms = sorted((out / "x").glob("attention_*.ppm"))
        assert len(ppms) == 2 and f"config_hash={h}".encode() in ppms[0].read_bytes()[:200]
        assert read_ppm(ppms[0]).shape == (3, 32, 32)
        assert run("eval-onpolicy", "--config", tiny, "--world", out / "w" / "world_train.bin",
                   "--out", out / "r") == 0
        ep = list(csv.DictReader(open(out / "r" / "episodes.csv", encoding="utf-8")))
        assert len(ep) == 2 and all(r["policy"] == "random" and r["config_hash"] == h for r in ep)

    def test_gen_world_idempotent(self, tmp_path):
        assert run("gen-world", "--out", tmp_path / "a") == 0
        assert run("gen-world", "--out", tmp_path / "b") == 0
        for f in ("world_train.bin", "world_test.bin"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_missing_input_names_file(self, tmp_path, capsys):
        assert run("collect", "--world", tmp_path / "absent.bin", "--out", tmp_path) == 1
        assert "absent.bin" in capsys.readouterr().err
        assert run("train", "--dataset", tmp_path / "gone.bin", "--out", tmp_path) == 1
        assert "gone.bin" in capsys.readouterr().err
        assert run("train", "--config", tmp_path / "nope.ini", "--out", tmp_path) == 1

    def test_config_errors_listed(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[world]\nsed = 1\n[training]\nepoch = 2\n")
        assert run("gen-world", "--config", bad, "--out", tmp_path) == 2
        err = capsys.readouterr().err
        assert "[world] sed" in err and "[training] epoch" in err

    def test_eval_offline_empty_dataset(self, tmp_path, capsys):
        c = ExperimentConfig()
        heads = (EventHeadSpec("terrain", "discrete", 2),)
        model = EventModel(c.model_config(heads=heads), seed=0)
        model.save(tmp_path / "m.ckpt", {})
        Dataset.empty(heads, 12, (3, 32, 32)).save(tmp_path / "empty.bin")
        assert run("eval-offline", "--checkpoint", tmp_path / "m.ckpt", "--dataset", tmp_path / "empty.bin",
                   "--out", tmp_path) == 1
        assert "empty" in capsys.readouterr().err

    def test_reproduce_toy_table(self, tiny, tmp_path, capsys):
        assert run("reproduce-toy", "--config", tiny, "--out", tmp_path) == 0
        out = capsys.readouterr().out
        for v in ("trajectory", "self_attention", "none"):
            assert v in out
        assert "train env" in out and "test env" in out and "2 seeds" in out
        rows = list(csv.DictReader(open(tmp_path / "toy_results.csv", encoding="utf-8")))
        assert len(rows) == 6 and {r["seed"] for r in rows} == {"0", "1"}


def test_parallel_matches_serial(tiny):
    cfg = ExperimentConfig.load(tiny)
    train_ds, test_ds = toy_datasets(cfg)
    serial = run_toy(cfg, train_ds, test_ds, (0, 1), ("trajectory", "none"), workers=1)
    parallel = run_toy(cfg, train_ds, test_ds, (0, 1), ("trajectory", "none"), workers=2)
    assert repr(serial) == repr(parallel)  # exact floats; the fm columns are NaN for 'none'
    assert "trajectory" in toy_summary(serial)
