"""Autodiff core checked against central finite differences."""
import math

import numpy as np
import pytest

from mapdrive import learncore as lc


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_match(make_loss, arrays, rel=1e-5, h=1e-6):
    """Backward grads of every input vs finite differences."""
    tensors = [lc.param(a) for a in arrays]
    loss = make_loss(*tensors)
    lc.backward(loss)
    for k in range(len(arrays)):
        def f(x, k=k):
            args = [lc.tensor(x if j == k else arrays[j])
                    for j in range(len(arrays))]
            return make_loss(*args).item()
        num = fd_grad(f, arrays[k], h)
        scale = max(np.abs(num).max(), np.abs(tensors[k].grad).max(), 1e-8)
        err = np.abs(tensors[k].grad - num).max() / scale
        assert err < rel, f"input {k}: rel err {err}"


def smooth_random(rng, shape, away_from=0.0, margin=0.05):
    """Random values kept clear of a nondifferentiable point."""
    x = rng.uniform(-2.0, 2.0, shape)
    near = np.abs(x - away_from) < margin
    x[near] += np.where(x[near] >= away_from, 2 * margin, -2 * margin)
    return x


# --- forward values -------------------------------------------------------------

def test_dense_identity():
    x = lc.tensor(np.arange(6.0).reshape(2, 3))
    y = lc.dense(x, lc.tensor(np.eye(3)), lc.tensor(np.zeros(3)))
    assert np.array_equal(y.data, x.data)


def test_pool_values():
    x = lc.tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    avg = lc.avg_pool2d(x, 2)
    assert np.array_equal(avg.data, [[[[2.5, 4.5], [10.5, 12.5]]]])
    mx = lc.max_pool2d(x, 2)
    assert np.array_equal(mx.data, [[[[5.0, 7.0], [13.0, 15.0]]]])


def test_channel_ops_values():
    x = lc.tensor(np.ones((1, 3, 2, 2)))
    s = lc.tensor(np.array([[1.0, 2.0, 3.0]]))
    y = lc.scale_channels(x, s)
    assert np.array_equal(y.data[0, :, 0, 0], [1.0, 2.0, 3.0])
    total = lc.channel_sum(y)
    assert total.shape == (1, 1, 2, 2)
    assert np.all(total.data == 6.0)


def test_l2norm_floor_forward():
    z = lc.l2norm_with_floor(lc.tensor(np.zeros((1, 4))), 1e-19)
    assert np.array_equal(z.data, np.zeros((1, 4)))
    x = np.array([[3.0, 0.0, 4.0, 0.0]])   # norm 5
    y = lc.l2norm_with_floor(lc.tensor(x), 1e-19)
    assert np.linalg.norm(y.data) == pytest.approx(1.0)
    assert np.allclose(y.data, x / 5.0)


def test_loss_values():
    p = lc.tensor(np.array([0.5]))
    assert lc.smooth_l1(lc.tensor(np.array([0.5])), np.array([0.0])).item() \
        == pytest.approx(0.125)
    assert lc.smooth_l1(lc.tensor(np.array([2.0])), np.array([0.0])).item() \
        == pytest.approx(1.5)
    assert lc.bce(p, np.array([1.0])).item() == pytest.approx(math.log(2))
    assert lc.bce(p, np.array([0.0])).item() == pytest.approx(math.log(2))
    assert lc.neg_log(lc.tensor(np.array([0.25]))).item() \
        == pytest.approx(math.log(4))


def test_lstm_zero_weights_gives_zero_state():
    x = lc.tensor(np.ones((2, 8)))
    h0 = lc.tensor(np.zeros((2, 4)))
    c0 = lc.tensor(np.zeros((2, 4)))
    w = lc.tensor(np.zeros((12, 16)))
    b = lc.tensor(np.zeros(16))
    h, c = lc.lstm_cell_step(x, h0, c0, w, b)
    assert np.all(h.data == 0.0) and np.all(c.data == 0.0)


def test_lstm_saturated_forget_keeps_cell():
    n_in, n_h = 3, 4
    w = np.zeros((n_in + n_h, 4 * n_h))
    b = np.zeros(4 * n_h)
    b[0:n_h] = -50.0          # input gate shut
    b[n_h:2 * n_h] = 50.0     # forget gate open
    x = lc.tensor(np.random.default_rng(0).uniform(-1, 1, (1, n_in)))
    c_prev = lc.tensor(np.array([[0.3, -0.7, 1.1, 0.0]]))
    _, c = lc.lstm_cell_step(x, lc.tensor(np.zeros((1, n_h))), c_prev,
                             lc.tensor(w), lc.tensor(b))
    assert np.allclose(c.data, c_prev.data, atol=1e-12)


# --- gradients vs finite differences ------------------------------------------------

def test_grad_dense():
    rng = np.random.default_rng(1)
    assert_grads_match(
        lambda x, w, b: lc.sum_all(lc.tanh(lc.dense(x, w, b))),
        [rng.uniform(-1, 1, (3, 5)), rng.uniform(-1, 1, (5, 4)),
         rng.uniform(-1, 1, 4)])


def test_grad_pointwise():
    rng = np.random.default_rng(2)
    x = smooth_random(rng, (4, 6))
    assert_grads_match(lambda t: lc.sum_all(lc.relu(t)), [x])
    assert_grads_match(lambda t: lc.sum_all(lc.tanh(t)), [x])
    assert_grads_match(lambda t: lc.sum_all(lc.sigmoid(t)), [x])


def test_grad_arithmetic():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 3))
    assert_grads_match(lambda x, y: lc.sum_all(lc.mul(lc.add(x, y),
                                                      lc.sub(x, y))), [a, b])
    assert_grads_match(lambda x: lc.sum_all(lc.scale(x, -2.5)), [a])


def test_grad_concat_slice_reshape():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 4))

    def f(x, y):
        z = lc.concat([x, y], axis=1)
        return lc.sum_all(lc.mul(lc.slice_cols(z, 2, 6),
                                 lc.slice_cols(z, 1, 5)))
    assert_grads_match(f, [a, b])
    assert_grads_match(
        lambda x: lc.sum_all(lc.tanh(lc.reshape(x, (3, 2)))), [a])


def test_grad_pools():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (2, 3, 4, 4))
    w = rng.uniform(-1, 1, (2, 3, 2, 2))

    def weighted(pool):
        def f(t):
            return lc.sum_all(lc.mul(pool(t, 2), lc.tensor(w)))
        return f
    assert_grads_match(weighted(lc.avg_pool2d), [x])
    assert_grads_match(weighted(lc.max_pool2d), [x])


def test_grad_channel_ops():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (2, 3, 2, 2))
    s = rng.uniform(0.5, 1.5, (2, 3))
    assert_grads_match(
        lambda a, b: lc.sum_all(lc.channel_sum(lc.scale_channels(a, b))),
        [x, s])


def test_grad_l2norm_both_branches():
    rng = np.random.default_rng(7)
    x = rng.uniform(0.5, 1.5, (3, 4))
    w = rng.uniform(-1, 1, (3, 4))
    assert_grads_match(
        lambda t: lc.sum_all(lc.mul(lc.l2norm_with_floor(t, 1e-19),
                                    lc.tensor(w))), [x])
    # floor branch: row norms below eps use the constant 1/eps denominator
    small = rng.uniform(-0.05, 0.05, (2, 4))
    assert_grads_match(
        lambda t: lc.sum_all(lc.mul(lc.l2norm_with_floor(t, 0.5),
                                    lc.tensor(w[:2]))), [small])
    # analytic check where fd cannot reach: zero row, tiny eps
    z = lc.param(np.zeros((1, 3)))
    lc.backward(lc.sum_all(lc.l2norm_with_floor(z, 1e-19)))
    assert np.allclose(z.grad, np.full((1, 3), 1e19))


def test_grad_losses():
    rng = np.random.default_rng(8)
    pred = smooth_random(rng, (6,), away_from=1.0)
    pred = np.where(np.abs(np.abs(pred) - 1.0) < 0.05, pred * 1.2, pred)
    target = np.zeros(6)
    assert_grads_match(lambda p: lc.smooth_l1(p, target), [pred])
    probs = rng.uniform(0.05, 0.95, 8)
    labels = rng.integers(0, 2, 8).astype(float)
    assert_grads_match(lambda p: lc.bce(p, labels), [probs])
    assert_grads_match(lambda p: lc.neg_log(p), [probs])


def test_grad_lstm_cell_vs_fd():
    rng = np.random.default_rng(9)
    n_in, n_h = 8, 6
    arrays = [rng.uniform(-1, 1, (2, n_in)), rng.uniform(-0.5, 0.5, (2, n_h)),
              rng.uniform(-0.5, 0.5, (2, n_h)),
              rng.uniform(-0.5, 0.5, (n_in + n_h, 4 * n_h)),
              rng.uniform(-0.5, 0.5, 4 * n_h)]

    def f(x, h0, c0, w, b):
        h, c = lc.lstm_cell_step(x, h0, c0, w, b)
        return lc.sum_all(lc.add(lc.tanh(h), lc.mul(c, c)))
    assert_grads_match(f, arrays)


def test_grad_composed_mlp():
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, (4, 5))
    target = rng.uniform(-1, 1, (4, 1))
    arrays = [rng.uniform(-0.5, 0.5, (5, 7)), rng.uniform(-0.5, 0.5, 7),
              rng.uniform(-0.5, 0.5, (7, 1)), rng.uniform(-0.5, 0.5, 1)]

    def f(w1, b1, w2, b2):
        h = lc.tanh(lc.dense(lc.tensor(x), w1, b1))
        return lc.smooth_l1(lc.dense(h, w2, b2), target)
    assert_grads_match(f, arrays)


# --- backward mechanics ----------------------------------------------------------

def test_backward_sum_gives_ones_and_requires_scalar():
    x = lc.param(np.arange(6.0).reshape(2, 3))
    lc.backward(lc.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))
    with pytest.raises(ValueError):
        lc.backward(lc.add(x, x))


def test_backward_constant_path_gives_zero():
    x = lc.param(np.ones((2, 2)))
    loss = lc.sum_all(lc.mul(x, lc.tensor(np.zeros((2, 2)))))
    lc.backward(loss)
    assert np.array_equal(x.grad, np.zeros((2, 2)))
    # parameter not in the graph at all: untouched
    y = lc.param(np.ones(3))
    assert y.grad is None


def test_backward_repeat_is_identical():
    rng = np.random.default_rng(11)
    x = lc.param(rng.uniform(-1, 1, (3, 3)))

    def run():
        loss = lc.sum_all(lc.tanh(lc.mul(x, x)))
        lc.backward(loss)
        return x.grad.copy()
    assert np.array_equal(run(), run())


def test_shared_subexpression_accumulates_once_per_use():
    x = lc.param(np.array([[2.0]]))
    y = lc.tanh(x)
    loss = lc.sum_all(lc.add(y, y))
    lc.backward(loss)
    assert x.grad[0, 0] == pytest.approx(2.0 * (1.0 - np.tanh(2.0) ** 2))


def test_detach_blocks_gradient():
    x = lc.param(np.array([[1.5]]))
    loss = lc.sum_all(lc.mul(lc.detach(lc.tanh(x)), x))
    lc.backward(loss)
    assert x.grad[0, 0] == pytest.approx(np.tanh(1.5))


def test_shape_errors():
    x = lc.tensor(np.ones((2, 3)))
    with pytest.raises(ValueError):
        lc.add(x, lc.tensor(np.ones((3, 2))))
    with pytest.raises(ValueError):
        lc.dense(x, lc.tensor(np.ones((4, 2))), lc.tensor(np.ones(2)))
    with pytest.raises(ValueError):
        lc.lstm_cell_step(x, lc.tensor(np.ones((2, 4))),
                          lc.tensor(np.ones((2, 4))),
                          lc.tensor(np.ones((5, 16))), lc.tensor(np.ones(16)))


# --- optimizer -----------------------------------------------------------------------

def test_adam_first_step_is_signed_lr():
    rng = np.random.default_rng(12)
    p = lc.param(rng.uniform(-1, 1, 6))
    before = p.data.copy()
    g = rng.uniform(0.5, 2.0, 6) * np.where(rng.uniform(size=6) < 0.5, -1, 1)
    p.grad = g.copy()
    params = {"p": p}
    lc.adam_step(params, lc.AdamState(params))
    update = p.data - before
    assert np.allclose(update, -1e-4 * np.sign(g), rtol=1e-6)


def test_adam_zero_grad_no_move():
    p = lc.param(np.array([1.0, -2.0]))
    before = p.data.copy()
    p.grad = np.zeros(2)
    params = {"p": p}
    st = lc.AdamState(params)
    lc.adam_step(params, st)
    lc.adam_step(params, st)
    assert np.array_equal(p.data, before)


def test_adam_quadratic_descends_monotonically():
    p = lc.param(np.array([0.0, 0.0]))
    params = {"p": p}
    st = lc.AdamState(params, lr=1e-2)
    losses = []
    for _ in range(200):
        loss = lc.sum_all(lc.mul(lc.sub(p, lc.tensor([3.0, -1.0])),
                                 lc.sub(p, lc.tensor([3.0, -1.0]))))
        lc.backward(loss)
        losses.append(loss.item())
        lc.adam_step(params, st)
    assert all(b < a for a, b in zip(losses[10:], losses[11:]))
    assert losses[-1] < losses[0] / 2


def test_training_is_bit_deterministic():
    def run():
        rng = np.random.default_rng(2024)
        w1, b1 = lc.init_dense(rng, 4, 8)
        w2, b2 = lc.init_dense(rng, 8, 1)
        params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
        st = lc.AdamState(params, lr=1e-3)
        x = rng.uniform(-1, 1, (16, 4))
        y = (x.sum(axis=1, keepdims=True) > 0).astype(float)
        for _ in range(20):
            out = lc.sigmoid(lc.dense(lc.relu(lc.dense(lc.tensor(x), w1, b1)),
                                      w2, b2))
            lc.backward(lc.bce(out, y))
            lc.adam_step(params, st)
        return {k: p.data.copy() for k, p in params.items()}
    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_init_bounds():
    rng = np.random.default_rng(13)
    w, b = lc.init_dense(rng, 25, 10)
    assert np.abs(w.data).max() <= 1 / 5 and np.abs(b.data).max() <= 1 / 5
    assert w.requires_grad and b.requires_grad


# --- checkpoints -----------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    params = {"enc/w": lc.param(rng.uniform(-1, 1, (3, 4))),
              "enc/b": lc.param(rng.uniform(-1, 1, 4)),
              "head/w": lc.param(rng.uniform(-1, 1, (4, 1)))}
    path = tmp_path / "model.ckpt"
    lc.save_checkpoint(path, params, meta={"variant": "toy", "epochs": 2})
    loaded, meta = lc.load_checkpoint(path)
    assert meta == {"variant": "toy", "epochs": 2}
    assert sorted(loaded) == sorted(params)
    for k in params:
        assert np.array_equal(loaded[k].data, params[k].data)
        assert loaded[k].requires_grad
    # binary payload is exactly the flat float64 parameter block
    n = sum(p.data.size for p in params.values())
    assert path.stat().st_size == 8 * n
