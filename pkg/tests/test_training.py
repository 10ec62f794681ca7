import numpy as np
import pytest

from fcblearn.datasets import build_training_matrix, synth_blobs
from fcblearn.meud import NetworkConfig, Variant, forward, init_params, make_widths
from fcblearn.numerics import ShapeError
from fcblearn.training import (AdamState, NonFiniteError, TrainConfig, adam_step, mse_cost,
                               train)


def scalar_mse(X, Xhat):
    m, n = len(X), len(X[0])
    return sum((X[i][j] - Xhat[i][j]) ** 2 for i in range(m) for j in range(n)) / (2 * m * n)


def textbook_adam_quadratic(c, target, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    w, m, v = 0.0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = 2 * c * (w - target)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return w


def test_mse_values():
    X = np.random.default_rng(0).uniform(size=(5, 7))
    assert mse_cost(X, X) == 0.0
    assert mse_cost([[1.0]], [[0.0]]) == 0.5
    Y = np.random.default_rng(1).uniform(size=(5, 7))
    assert abs(mse_cost(X, Y) - scalar_mse(X.tolist(), Y.tolist())) <= 1e-12
    assert mse_cost(X, Y) > 0
    with pytest.raises(ShapeError):
        mse_cost(X, Y[:, :3])


def test_adam_zero_gradient():
    params = [np.ones((2, 3)), np.arange(4.0)]
    state = AdamState.for_params(params)
    _, new = adam_step(state, params, [np.zeros((2, 3)), np.zeros(4)])
    for a, b in zip(params, new):
        np.testing.assert_array_equal(a, b)
    assert state.t == 1


def test_adam_first_step_magnitude():
    g = np.array([3.0, -0.02, 1e-3])
    state = AdamState.for_params([np.zeros(3)], learning_rate=0.01)
    _, (w,) = adam_step(state, [np.zeros(3)], [g])
    expected = -0.01 * np.sign(g) * np.abs(g) / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(w, expected, rtol=1e-12)
    np.testing.assert_allclose(np.abs(w), 0.01, rtol=1e-4)


@pytest.mark.parametrize("c", [0.5, 1.0, 10.0])
def test_adam_quadratic_converges(c):
    w = np.zeros(1)
    state = AdamState.for_params([w], learning_rate=0.05)
    trace = []
    for _ in range(200):
        _, (w,) = adam_step(state, [w], [2.0 * c * (w - 3.0)])
        trace.append(w[0])
    assert abs(trace[99] - textbook_adam_quadratic(c, 3.0, 0.05, 100)) <= 1e-12
    # the textbook run sits at 2.94340066 after 100 steps, for any c
    assert abs(trace[99] - 2.94340066) <= 1e-7
    assert abs(trace[199] - 3.0) <= 0.01


def test_adam_deterministic_and_shape_checked():
    rng = np.random.default_rng(0)
    p, g = [rng.normal(size=(3, 2))], [rng.normal(size=(3, 2))]
    a = adam_step(AdamState.for_params(p), p, g)[1][0]
    b = adam_step(AdamState.for_params(p), p, g)[1][0]
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ShapeError):
        adam_step(AdamState.for_params(p), p, [np.zeros((2, 3))])


def test_adam_state_invariants():
    with pytest.raises(ValueError):
        AdamState([], [], beta1=1.0)
    with pytest.raises(ValueError):
        AdamState([], [], epsilon=0.0)


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def synthetic_training(m=200, n=30, seed=0):
    ds = synth_blobs(5, m // 5, n, spread=0.1, seed=seed).shuffled(seed)
    return build_training_matrix(ds, seed=seed)


def net(variant, n=30, r=6, seed=0):
    cfg = NetworkConfig(make_widths(n, r, 4, variant), variant, seed=seed)
    ff = [np.random.default_rng(seed).normal(0, 0.1, (cfg.widths[k], cfg.widths[k + 1]))
          for k in range(cfg.n_ff)]
    return init_params(cfg, ff)


def test_full_batch_single_step():
    enc = synthetic_training(40)
    rep = train(net(Variant.MEUD), enc, TrainConfig(epochs=1, batch_size=40))
    assert rep.steps == 1 and len(rep.losses) == 1 and len(rep.seconds) == 1
    p0 = net(Variant.MEUD)
    assert rep.losses[0] == mse_cost(enc.data, forward(p0, enc.data).post[-1])


def test_train_reproducible_and_input_untouched():
    enc = synthetic_training()
    before = enc.data.copy()
    cfg = TrainConfig(epochs=3, batch_size=16, seed=4)
    a = train(net(Variant.MEUD_COOP), enc, cfg)
    b = train(net(Variant.MEUD_COOP), enc, cfg)
    assert a.losses == b.losses
    np.testing.assert_array_equal(enc.data, before)


@pytest.mark.parametrize("variant", list(Variant))
def test_train_loss_decreases(variant):
    enc = synthetic_training(200)
    rep = train(net(variant), enc, TrainConfig(epochs=15, batch_size=32, learning_rate=3e-3, seed=1))
    assert rep.losses[-1] < rep.losses[0]


def test_train_nonfinite_abort():
    enc = synthetic_training(40)
    data = enc.data.copy()
    data[3, 7] = np.nan
    with pytest.raises(NonFiniteError, match="epoch 1, batch 1"):
        train(net(Variant.MEUD), data, TrainConfig(epochs=2, batch_size=40))


def test_train_width_mismatch():
    with pytest.raises(ShapeError):
        train(net(Variant.MEUD, n=20), synthetic_training(), TrainConfig(epochs=1))


def test_on_epoch_callback():
    seen = []
    train(net(Variant.MEUD), synthetic_training(40), TrainConfig(epochs=3),
          on_epoch=lambda e, loss, s: seen.append(e))
    assert seen == [1, 2, 3]
