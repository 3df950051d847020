"""Properties of briefly trained models on the toy task (about half a minute of training)."""

import numpy as np
import pytest

from trajattn.autodiff import no_grad
from trajattn.model import ModelConfig
from trajattn.simulator import VehicleParams, VehicleState, collect_offpolicy, generate_world, rollout
from trajattn.simulator.dynamics import robot_frame_positions
from trajattn.training import TrainConfig, train


@pytest.fixture(scope="module")
def toy():
    world = generate_world(0)
    return world, collect_offpolicy(world, 1200, seed=3)


@pytest.fixture(scope="module")
def trained_traj(toy):
    _, ds = toy
    return train(ds, ModelConfig(heads=ds.heads), TrainConfig(epochs=5), seed=0).model


def test_straight_actions_follow_kinematics(toy, trained_traj):
    world, ds = toy
    idx, truth = [], []
    for i in range(300):
        start = VehicleState(*ds.poses[i])
        states = rollout(start, np.zeros(12), VehicleParams(), world)
        if not states[-1].collided:  # wall hits freeze the vehicle, which the model learns too
            idx.append(i)
            truth.append(robot_frame_positions(start, states))
    assert len(idx) > 100
    with no_grad():
        pred = trained_traj.forward_full(ds.float_images(idx), np.zeros((len(idx), 12, 1))).positions.data
    assert np.all(np.diff(pred[:, :, 0], axis=1) > 0)
    assert np.all(pred[:, 0, 0] > 0)
    assert np.linalg.norm(pred - np.array(truth), axis=-1).mean() < 1.0


def receptive_radius(config: ModelConfig) -> int:
    """Pixels on either side of a feature cell's centre that can reach it through the encoder."""
    r, stride = 0, 1
    for c in config.convs:
        r += c.padding * stride
        stride *= c.stride
    return r


def test_perturbation_outside_first_mask(toy, trained_traj):
    """Pixels that cannot reach the first mask's 3-sigma cells barely move the first-step events."""
    _, ds = toy
    m = trained_traj
    g = m.config.geometry
    s, rad = g.s_out, receptive_radius(m.config)
    fy, fx = np.mgrid[0:g.feature_h, 0:g.feature_w]
    rng = np.random.default_rng(0)
    worst, tested = 0.0, 0
    with no_grad():
        for i in range(40):
            img, act = ds.float_images([i]), ds.actions[[i]]
            out = m.forward_full(img, act)
            centre = m.feature_positions(out.positions.data[0, 0])
            sigma = np.sqrt(np.exp(out.cov_params.data[0, 0, 0]))
            inside = np.hypot(fx - centre[0], fy - centre[1]) <= 3 * sigma
            free = np.ones(img.shape[2:], bool)
            for r, c in zip(*np.nonzero(inside)):
                free[max(0, r * s - rad):r * s + rad + 1, max(0, c * s - rad):c * s + rad + 1] = False
            if not free.any():
                continue
            moved = img.copy()
            moved[0][:, free] = rng.random((3, int(free.sum())))
            out2 = m.forward_full(moved, act)
            worst = max(worst, max(np.abs(out2.events[k].data[0, 0] - out.events[k].data[0, 0]).max()
                                   for k in out.events))
            tested += 1
    assert tested >= 30
    assert worst < 1e-3


def test_self_attention_entropy_falls(toy):
    _, ds = toy
    res = train(ds, ModelConfig(variant="self_attention", heads=ds.heads), TrainConfig(epochs=5), seed=0)
    ent = res.metric("val", "attention", "entropy")
    uniform = np.log(ds.images.shape[2] * ds.images.shape[3] / res.model.config.geometry.s_out ** 2)
    assert ent[0] <= uniform + 1e-9
    assert ent[-1] < ent[0]
