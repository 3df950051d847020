import math
from dataclasses import replace

import numpy as np
import pytest

from trajattn.geometry import CameraRig, robot_to_pixel
from trajattn.simulator import (
    RandomSteering, VehicleParams, VehicleState, WorldParams, collect_offpolicy, generate_world, read_ppm,
    render_observation, rollout, run_episode, shared_starts, step_dynamics, swap_terrain, wrap_angle, write_ppm,
)
from trajattn.simulator.dynamics import robot_frame_positions
from trajattn.simulator.render import HIT_GROUND
from trajattn.simulator.world import WorldSpec
from trajattn.training import Dataset

VP = VehicleParams()


@pytest.fixture(scope="module")
def toy():
    return generate_world(3)


@pytest.fixture(scope="module")
def proc():
    return generate_world(5, WorldParams.procedural())


def open_world(num_classes=3, extent=64.0) -> WorldSpec:
    w = generate_world(0, WorldParams(extent=extent, num_classes=num_classes, block_size=16.0))
    return replace(w, terrain=np.zeros_like(w.terrain))


class TestWorld:
    @pytest.mark.parametrize("params", [WorldParams(), WorldParams.procedural()])
    def test_deterministic(self, params):
        assert generate_world(11, params).same_as(generate_world(11, params))
        assert not generate_world(11, params).same_as(generate_world(12, params))

    def test_toy_confound(self, toy):
        smooth = toy.terrain == 0
        assert smooth.any() and (~smooth).any()
        assert np.all(toy.background[smooth] == 0)  # foliage
        assert np.all(toy.background[~smooth] == len(toy.background_palette) - 1)  # sky/rock
        assert np.allclose(toy.background_palette[0], [0.16, 0.42, 0.14])

    @pytest.mark.parametrize("which", ["toy", "proc"])
    def test_swap(self, which, request):
        w = request.getfixturevalue(which)
        s = swap_terrain(w)
        assert swap_terrain(s).same_as(w)
        assert np.array_equal(s.background, w.background) and np.array_equal(s.obstacles, w.obstacles)
        assert np.array_equal(s.terrain, w.num_classes - 1 - w.terrain)

    def test_infeasible_rejected(self):
        with pytest.raises(ValueError):
            generate_world(0, WorldParams.procedural(start_clearance=70.0))

    def test_procedural_classes_and_obstacles(self, proc):
        assert set(np.unique(proc.terrain)) == {0, 1, 2}
        assert len(proc.obstacles) > 10
        d = np.hypot(*(proc.obstacles[:, None, :2] - proc.obstacles[None, :, :2]).transpose(2, 0, 1))
        assert d[np.triu_indices(len(d), 1)].min() >= proc.params.obstacle_spacing

    def test_file_round_trip(self, proc, tmp_path):
        proc.save(tmp_path / "w.bin")
        assert WorldSpec.load(tmp_path / "w.bin").same_as(proc)
        assert (tmp_path / "w.bin").read_bytes()[:6] == b"TRAJWD"


class TestDynamics:
    def test_straight(self):
        s = step_dynamics(VehicleState(1.0, 2.0, 0.7), 0.0, VP)
        assert s.heading == 0.7
        assert abs(math.hypot(s.x - 1.0, s.y - 2.0) - VP.speed * VP.dt) < 1e-12
        assert abs(math.atan2(s.y - 2.0, s.x - 1.0) - 0.7) < 1e-12

    @pytest.mark.parametrize("action", [-1.0, -0.3, 0.45, 1.0])
    def test_arc_closed_form(self, action):
        delta = action * VP.max_steer
        radius = VP.wheelbase / math.tan(delta)
        start = VehicleState(3.0, -2.0, 0.4)
        states = rollout(start, [action] * 4, VP)
        centre = np.array([start.x - radius * math.sin(start.heading), start.y + radius * math.cos(start.heading)])
        for k, s in enumerate(states, 1):
            th = start.heading + k * VP.speed * VP.dt / radius
            expected = centre + radius * np.array([math.sin(th), -math.cos(th)])
            assert np.max(np.abs([s.x, s.y] - expected)) < 1e-9
            assert abs(wrap_angle(s.heading - th)) < 1e-12

    def test_collision_freezes(self, proc):
        ox, oy, r = proc.obstacles[0]
        start = VehicleState(ox - r - 0.5, oy, 0.0)
        s = step_dynamics(start, 0.0, VP, proc)
        assert s.collided and (s.x, s.y, s.heading) == (start.x, start.y, start.heading)
        assert step_dynamics(s, 1.0, VP, proc) == s

    def test_wall_collision(self, toy):
        s = step_dynamics(VehicleState(toy.extent - 0.5, 10.0, 0.0), 0.0, VP, toy)
        assert s.collided

    def test_heading_wrapped(self):
        s = VehicleState(10.0, 10.0, math.pi - 0.01)
        for _ in range(5):
            s = step_dynamics(s, 1.0, VP)
            assert -math.pi < s.heading <= math.pi


class TestRender:
    def test_principal_ray_depth(self):
        rig = CameraRig()
        w = open_world()
        r = render_observation(w, VehicleState(32.0, 32.0, 0.3), rig)
        pitch = math.radians(-rig.pitch_deg)
        row = col = 16
        assert r.hit[row, col] == HIT_GROUND
        assert abs(r.depth[row, col] - rig.height / math.sin(pitch)) < 1e-9
        ground_range = math.hypot(r.points[row, col, 0] - 32.0, r.points[row, col, 1] - 32.0)
        assert abs(ground_range - rig.height / math.tan(pitch)) < 1e-9

    def test_smooth_dominates_lower_half(self, toy):
        ys, xs = np.nonzero(toy.terrain[8::16, 8::16] == 0)
        state = VehicleState(8.0 + 16 * xs[0], 8.0 + 16 * ys[0], 0.0)
        img = render_observation(toy, state).image
        lower = img[:, 16:, :].reshape(3, -1).T
        d = np.linalg.norm(lower[:, None, :] - toy.terrain_palette[None], axis=-1)
        assert np.mean(np.argmin(d, axis=1) == 0) > 0.8

    def test_deterministic(self, proc):
        s = VehicleState(40.0, 50.0, 1.0)
        assert np.array_equal(render_observation(proc, s).image, render_observation(proc, s).image)

    @pytest.mark.parametrize("target", [(3.0, 0.0), (4.0, 1.2), (6.0, -2.0), (2.5, 0.8)])
    def test_marker_lands_on_projection(self, target):
        rig = CameraRig()
        start = VehicleState(20.0, 30.0, 0.6)
        pose = start.pose()
        p_w = pose.apply([target[0], target[1], 0.0])
        colour = (1.0, 0.0, 1.0)
        w = replace(open_world(), markers=[(p_w[0], p_w[1], 0.3, colour)])
        img = render_observation(w, start, rig).image
        ys, xs = np.nonzero(np.all(np.abs(img.transpose(1, 2, 0) - colour) < 1e-12, axis=-1))
        assert len(xs) > 0
        uv, _, _ = robot_to_pixel([[target[0], target[1], 0.0]], rig.extrinsics(), rig.intrinsics())
        assert abs(xs.mean() - uv[0, 0]) <= 1.0 and abs(ys.mean() - uv[0, 1]) <= 1.0

    def test_ppm_round_trip(self, toy, tmp_path):
        img = render_observation(toy, VehicleState(10.0, 10.0, 0.0)).to_uint8()
        write_ppm(tmp_path / "f.ppm", img)
        assert (tmp_path / "f.ppm").read_bytes()[:2] == b"P6"
        assert np.array_equal(read_ppm(tmp_path / "f.ppm"), img)
        write_ppm(tmp_path / "g.ppm", img, "config_hash=abc\nseed=3")
        assert b"# seed=3\n" in (tmp_path / "g.ppm").read_bytes()
        assert np.array_equal(read_ppm(tmp_path / "g.ppm"), img)


@pytest.fixture(scope="module")
def data():
    w = generate_world(4, WorldParams.procedural())
    return w, collect_offpolicy(w, 1000, seed=2)


class TestCollect:
    def test_length_and_invariants(self, data):
        w, ds = data
        assert len(ds) == 1000 and ds.horizon == 12 and ds.images.shape[1:] == (3, 32, 32)
        assert {h.name for h in ds.heads} == {"terrain", "collision", "dpos"}
        np.testing.assert_allclose(np.cumsum(ds.labels["dpos"], axis=1), ds.positions, atol=1e-12)
        coll = ds.labels["collision"]
        assert np.all(np.diff(coll, axis=1) >= 0)  # sticky

    def test_replay(self, data):
        w, ds = data
        for i in range(0, len(ds), 7):
            x, y, th = ds.poses[i]
            start = VehicleState(x, y, th)
            states = rollout(start, ds.actions[i], VP, w)
            assert np.max(np.abs(robot_frame_positions(start, states) - ds.positions[i])) < 1e-9
            assert np.array_equal(ds.labels["terrain"][i], w.terrain_at([s.x for s in states], [s.y for s in states]))

    def test_collisions_labelled(self, data):
        _, ds = data
        assert ds.labels["collision"].any()

    def test_deterministic(self, data):
        w, ds = data
        again = collect_offpolicy(w, 50, seed=2)
        assert np.array_equal(again.images, ds.images[:50]) and np.array_equal(again.positions, ds.positions[:50])

    def test_dataset_round_trip(self, data, tmp_path):
        _, ds = data
        sub = ds.subset(np.arange(40))
        sub.save(tmp_path / "d.bin")
        back = Dataset.load(tmp_path / "d.bin")
        assert np.array_equal(back.images, sub.images) and np.array_equal(back.positions, sub.positions)
        assert np.array_equal(back.poses, sub.poses) and back.heads == sub.heads
        for k in sub.labels:
            assert np.array_equal(back.labels[k], sub.labels[k])

    def test_coverage(self):
        w = generate_world(6)
        ds = collect_offpolicy(w, 5000, seed=1)
        assert set(np.unique(ds.labels["terrain"])) == set(np.unique(w.terrain))

    def test_no_start_rejected(self, toy):
        blocked = replace(toy, params=replace(toy.params, start_clearance=40.0))
        with pytest.raises(ValueError):
            collect_offpolicy(blocked, 10, seed=0)


class TestEpisode:
    def test_all_smooth_return(self):
        w = open_world(num_classes=3)
        rec = run_episode(w, lambda img: 0.0, 3.0, VehicleState(10.0, 32.0, 0.0))
        assert rec.steps == rec.max_steps == 18 and not rec.collided
        assert rec.episode_return == 18 * 3 and rec.completed_pct == 100.0

    def test_reproducible(self, proc):
        start = shared_starts(proc, 2, seed=9)
        assert start == shared_starts(proc, 2, seed=9)
        r1 = run_episode(proc, RandomSteering(3), 5.0, start[0])
        r2 = run_episode(proc, RandomSteering(3), 5.0, start[0])
        assert r1.episode_return == r2.episode_return and np.array_equal(r1.path, r2.path)

    def test_policy_failure_aborts(self):
        def broken(img):
            raise RuntimeError("planner exploded")

        rec = run_episode(open_world(), broken, 2.0, VehicleState(10.0, 32.0, 0.0))
        assert rec.steps == 0 and "planner exploded" in rec.aborted

    def test_collision_terminates(self, proc):
        ox, oy, r = proc.obstacles[0]
        rec = run_episode(proc, lambda img: 0.0, 5.0, VehicleState(ox - r - 3.0, oy, 0.0))
        assert rec.collided and rec.steps < rec.max_steps
