import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcases import op_cases, param
from trajattn.autodiff import (
    AdamState, NonFiniteGradientError, ShapeError, Tape, Tensor, adam_step, backward,
    check_gradients, load_weights, lstm_cell, ops, save_weights,
)


def _brute_conv(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation, independent of the im2col path."""
    bsz, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((bsz, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((bsz, o, ho, wo))
    for n in range(bsz):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, oc, i, j] = np.sum(patch * w[oc]) + b[oc]
    return out


class TestForward:
    def test_matmul_identity(self):
        a = np.random.default_rng(0).normal(size=(3, 3))
        out = ops.matmul(Tensor(np.eye(3)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_conv_all_ones(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = ops.conv2d(x, w, stride=1, padding=1).data[0, 0]
        assert out[1, 1] == 9.0 and out[2, 2] == 9.0
        assert out[0, 0] == out[0, 3] == out[3, 0] == out[3, 3] == 4.0
        assert out[0, 1] == 6.0

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (2, 0, 3), (1, 2, 5), (2, 2, 5)])
    def test_conv_matches_brute_force(self, stride, pad, k):
        rng = np.random.default_rng(stride * 10 + k)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, k, k))
        b = rng.normal(size=4)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad)
        np.testing.assert_allclose(out.data, _brute_conv(x, w, b, stride, pad), atol=1e-12)

    @pytest.mark.parametrize("size", [8, 16, 32])
    def test_stride_two_halves(self, size):
        x = Tensor(np.zeros((1, 2, size, size)))
        out = ops.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), stride=2, padding=1)
        assert out.shape == (1, 3, size // 2, size // 2)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0]), axis=0).data, [1 / 3] * 3)

    def test_softmax_empty_axis_rejected(self):
        with pytest.raises(ShapeError, match="softmax"):
            ops.softmax(Tensor(np.zeros((2, 0))), axis=1)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_softmax_is_distribution(self, vals):
        y = ops.softmax(Tensor(vals), axis=0).data
        assert abs(y.sum() - 1.0) < 1e-9
        assert np.all(y > 0) or len(vals) == 1

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"add: shape mismatch \(2, 3\) vs \(3, 2\)"):
            ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        with pytest.raises(ShapeError, match="matmul"):
            ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        with pytest.raises(ShapeError, match="conv2d"):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_broadcast_mul_over_channels(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(size=(2, 4, 4))
        f = rng.normal(size=(2, 3, 4, 4))
        out = ops.broadcast_mul(Tensor(m), Tensor(f)).data
        for c in range(3):
            np.testing.assert_array_equal(out[:, c], m * f[:, c])

    def test_recording_only_with_grad(self):
        a = Tensor(np.ones(3))
        assert ops.relu(a)._node is None
        b = Tensor(np.ones(3), requires_grad=True)
        assert ops.relu(b)._node is not None

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(5)
            x = Tensor(rng.normal(size=(2, 3, 8, 8)))
            w = Tensor(rng.normal(size=(4, 3, 3, 3)))
            return ops.softmax(ops.reshape(ops.conv2d(x, w, stride=2, padding=1), (2, -1)), axis=1).data
        assert np.array_equal(run(), run())


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(ops.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(ops.sum(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            backward(ops.relu(x))

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ops.sum(ops.mul(x, x))
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_tape_order_and_single_visit(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        y = ops.relu(x)
        z = ops.add(y, y)
        loss = ops.sum(ops.mul(z, x))
        tape = backward(loss)
        idx = [n.index for n in tape.nodes]
        assert idx == sorted(idx) and len(set(idx)) == len(idx)
        for n in tape.nodes:
            for t in n.inputs:
                assert t._node is None or t._node.index < n.index
        # d/dx sum(2 relu(x) * x) = 4x for x>0, 0 otherwise
        np.testing.assert_allclose(x.grad, [4.0, 0.0])
        assert isinstance(Tape.from_output(loss), Tape)

    def test_grad_shape_invariant(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        assert x.grad.shape == x.shape
        assert Tensor(np.ones(2)).grad is None


@pytest.mark.parametrize("seed", range(3))
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, params, loss_fn in op_cases(rng):
        errs = check_gradients(loss_fn, params)
        assert max(errs) < 1e-4, (name, errs)


class TestLSTM:
    def _weights(self, rng, n_in, hidden, scale=0.5):
        w = Tensor(rng.uniform(-scale, scale, size=(n_in + hidden, 4 * hidden)), requires_grad=True)
        b = Tensor(rng.uniform(-scale, scale, size=4 * hidden), requires_grad=True)
        return w, b

    def test_zero_weights_zero_output(self):
        x, h, c = Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.zeros((2, 4)))
        h2, c2 = lstm_cell(x, h, c, Tensor(np.zeros((7, 16))), Tensor(np.zeros(16)))
        np.testing.assert_array_equal(h2.data, 0.0)
        np.testing.assert_array_equal(c2.data, 0.0)

    def test_saturated_forget_keeps_cell(self):
        hidden = 4
        rng = np.random.default_rng(2)
        c = Tensor(rng.normal(size=(2, hidden)))
        b = np.zeros(4 * hidden)
        b[:hidden] = -50.0            # input gate -> 0
        b[hidden:2 * hidden] = 50.0   # forget gate -> 1
        w = Tensor(rng.normal(scale=0.1, size=(3 + hidden, 4 * hidden)))
        _, c2 = lstm_cell(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, hidden))), c, w, Tensor(b))
        np.testing.assert_allclose(c2.data, c.data, atol=1e-6)

    def test_hidden_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="lstm_cell"):
            lstm_cell(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 5))), Tensor(np.ones((1, 5))),
                      Tensor(np.zeros((7, 16))), Tensor(np.zeros(16)))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        w, b = self._weights(rng, 3, 4)
        x = param(rng, 2, 3)
        h = param(rng, 2, 4)
        c = param(rng, 2, 4)

        errs = check_gradients(lambda: ops.sum(lstm_cell(x, h, c, w, b)[0]), [w, b, x, h, c])
        assert max(errs) < 1e-4


class TestAdam:
    def test_zero_grad_no_change(self):
        p = {"w": Tensor([1.0, -2.0], requires_grad=True)}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        p = {"w": Tensor([0.0], requires_grad=True)}
        state = AdamState(learning_rate=1e-3)
        adam_step(p, {"w": np.array([1.0])}, state)
        np.testing.assert_allclose(p["w"].data, [-1e-3 / (1.0 + 1e-8)], rtol=1e-12)
        assert state.step == 1

    def test_step_counter_and_buffers(self):
        p = {"a": Tensor(np.ones((2, 2)), requires_grad=True)}
        state = AdamState()
        for k in range(1, 4):
            adam_step(p, {"a": np.ones((2, 2))}, state)
            assert state.step == k
        assert state.m["a"].shape == (2, 2) and state.v["a"].shape == (2, 2)

    def test_nan_gradient_rejected(self):
        p = {"w": Tensor([1.0], requires_grad=True)}
        state = AdamState()
        with pytest.raises(NonFiniteGradientError):
            adam_step(p, {"w": np.array([np.nan])}, state)
        assert state.step == 0 and p["w"].data[0] == 1.0

    def test_larger_decay_smaller_norm(self):
        def run(wd):
            rng = np.random.default_rng(0)
            target = rng.normal(size=5)
            p = {"w": Tensor(rng.normal(size=5), requires_grad=True)}
            state = AdamState(weight_decay=wd, learning_rate=1e-2)
            for _ in range(300):
                adam_step(p, {"w": p["w"].data - target}, state)
            return np.linalg.norm(p["w"].data)
        assert run(5e-4) < run(1e-4)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"conv.w": rng.normal(size=(2, 3, 3, 3)), "b": rng.normal(size=4), "s": np.array(2.5)}
    path = tmp_path / "w.bin"
    save_weights(path, params, {"seed": 3})
    loaded, meta = load_weights(path)
    assert meta == {"seed": 3}
    assert list(loaded) == list(params)
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])
    raw = path.read_bytes()
    assert raw[:8] == b"TRAJATTN" and int.from_bytes(raw[8:12], "little") == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_composite_graph_gradients(seed):
    rng = np.random.default_rng(seed)
    x = param(rng, 2, 3)
    w = param(rng, 3, 3)
    loss = lambda: ops.sum(ops.tanh(ops.matmul(ops.sigmoid(ops.matmul(x, w)), w)))  # noqa: E731
    assert max(check_gradients(loss, [x, w])) < 1e-4
    assert np.all(np.isfinite(x.grad)) and np.all(np.isfinite(w.grad))
