import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturegen import nn

from gradcases import batchnorm_case, dense_case, gru_case, speech_net_case


def test_rng_streams_are_reproducible_and_distinct():
    a = nn.make_rng(42, 1).random(5)
    assert np.array_equal(a, nn.make_rng(42, 1).random(5))
    assert not np.array_equal(a, nn.make_rng(42, 2).random(5))
    assert not np.array_equal(a, nn.make_rng(43, 1).random(5))


# -- dense / relu ---------------------------------------------------------------------


def test_dense_identity_and_scalar():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(nn.dense_forward(np.eye(3), np.zeros(3), x), x)
    y = nn.dense_forward(np.array([[2.0]]), np.array([3.0]), np.array([[4.0]]))
    assert y[0, 0] == 11.0
    dW, db, dx = nn.dense_backward(np.array([[2.0]]), np.array([[4.0]]), np.ones((1, 1)))
    assert dW[0, 0] == 4.0 and db[0] == 1.0 and dx[0, 0] == 2.0


def test_dense_shape_mismatch():
    with pytest.raises(ValueError):
        nn.dense_forward(np.zeros((2, 3)), np.zeros(2), np.zeros((1, 4)))


def test_dense_gradients(rng):
    assert nn.grad_check(*dense_case(rng), rng) < 1e-6


def test_relu():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(nn.relu_forward(x), [0, 0, 2])
    np.testing.assert_array_equal(nn.relu_backward(x, np.ones(3)), [0, 0, 1])


def test_relu_gradients_away_from_zero(rng):
    x = rng.standard_normal(50)
    x[np.abs(x) < 0.1] = 0.5
    p = {"x": x}
    g = nn.relu_backward(x, 2 * nn.relu_forward(x))
    assert nn.grad_check(lambda: float(np.sum(nn.relu_forward(p["x"]) ** 2)), p, {"x": g}, rng) < 1e-7


# -- batch norm -------------------------------------------------------------------------


def test_batchnorm_constant_column_outputs_beta():
    st_ = nn.BatchNormState.create(2)
    x = np.column_stack([np.full(4, 3.0), np.arange(4.0)])
    y, _ = nn.batchnorm_forward(np.ones(2), np.array([0.7, 0.0]), st_, x, True)
    np.testing.assert_allclose(y[:, 0], 0.7)


def test_batchnorm_standardizes(rng):
    y, _ = nn.batchnorm_forward(np.ones(3), np.zeros(3), nn.BatchNormState.create(3), rng.standard_normal((64, 3)) * 5 + 2, True)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=0), 1, atol=1e-5)


def test_batchnorm_running_stats_momentum(rng):
    st_ = nn.BatchNormState.create(2)
    x = rng.standard_normal((10, 2))
    nn.batchnorm_forward(np.ones(2), np.zeros(2), st_, x, True)
    np.testing.assert_allclose(st_.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(st_.running_var, 0.9 + 0.1 * x.var(axis=0))
    assert np.all(st_.running_var >= 0)


def test_batchnorm_train_needs_batch_of_two():
    with pytest.raises(ValueError):
        nn.batchnorm_forward(np.ones(2), np.zeros(2), nn.BatchNormState.create(2), np.zeros((1, 2)), True)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(rng, train):
    assert nn.grad_check(*batchnorm_case(rng, train), rng) < 1e-5


# -- dropout / noise ---------------------------------------------------------------------


def test_dropout_identity_cases(rng):
    x = rng.standard_normal((3, 4))
    assert nn.dropout_forward(x, 0.0, rng, True)[0] is x
    assert nn.dropout_forward(x, 0.1, rng, False)[0] is x


def test_dropout_rate_and_expectation():
    rng = nn.make_rng(5)
    y, mask = nn.dropout_forward(np.ones(1_000_000), 0.1, rng, True)
    assert abs(np.mean(mask == 0) - 0.1) < 0.002
    assert abs(y.mean() - 1.0) < 0.003
    assert set(np.unique(y)) == {0.0, 1.0 / 0.9}


def test_dropout_rejects_bad_p(rng):
    with pytest.raises(ValueError):
        nn.dropout_forward(np.ones(3), 1.0, rng, True)


def test_gaussian_noise(rng):
    x = np.zeros((100_000, 3))
    std = np.array([1.0, 0.0, 4.0])
    assert np.array_equal(nn.add_gaussian_noise(x, std, rng, 0.0), x)
    noisy = nn.add_gaussian_noise(x, std, rng, 0.05)
    assert np.all(noisy[:, 1] == 0.0)
    emp = noisy.std(axis=0)
    assert abs(emp[0] / 0.05 - 1) < 0.02 and abs(emp[2] / 0.2 - 1) < 0.02


# -- GRU ------------------------------------------------------------------------------------


def zero_gru(hidden, n_in):
    p = {k: np.zeros((hidden, n_in)) for k in ("W_z", "W_r", "W_h")}
    p.update({k: np.zeros((hidden, hidden)) for k in ("U_z", "U_r", "U_h")})
    p.update({k: np.zeros(hidden) for k in ("b_z", "b_r", "b_h")})
    return p


def test_gru_zero_stays_zero():
    h, _ = nn.gru_forward(zero_gru(3, 2), np.zeros((5, 1, 2)))
    assert np.all(h == 0.0)


def test_gru_scalar_hand_evaluation():
    p = {"W_z": [[0.5]], "W_r": [[-0.3]], "W_h": [[0.8]], "U_z": [[0.2]], "U_r": [[0.4]], "U_h": [[-0.6]],
         "b_z": [0.1], "b_r": [0.05], "b_h": [-0.2]}
    p = {k: np.array(v, dtype=float) for k, v in p.items()}
    x, h0 = 1.5, 0.3
    z = 1 / (1 + np.exp(-(0.5 * x + 0.2 * h0 + 0.1)))
    r = 1 / (1 + np.exp(-(-0.3 * x + 0.4 * h0 + 0.05)))
    hc = np.tanh(0.8 * x + -0.6 * (r * h0) - 0.2)
    expected = (1 - z) * h0 + z * hc
    h, _ = nn.gru_forward(p, np.array([[[x]]]), np.array([[h0]]))
    assert abs(h[0, 0, 0] - expected) < 1e-12


def test_gru_bptt_gradients(rng):
    assert nn.grad_check(*gru_case(rng), rng) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_gru_state_bounded(seed, steps):
    r = np.random.default_rng(seed)
    # |pre-activation| <= 0.5*3*3 + 0.5*4 + 0.5 = 7, so tanh stays representably below 1
    p = {k: r.uniform(-0.5, 0.5, v.shape) for k, v in zero_gru(4, 3).items()}
    h, _ = nn.gru_forward(p, r.uniform(-3, 3, (steps, 2, 3)))
    assert np.all(np.abs(h) < 1.0)
    # huge pre-activations saturate tanh to exactly 1.0 in floating point
    big = {k: v * 100 for k, v in p.items()}
    h, _ = nn.gru_forward(big, r.uniform(-30, 30, (steps, 2, 3)))
    assert np.all(np.abs(h) <= 1.0)


def test_speech_net_stack_gradients(rng):
    assert nn.grad_check(*speech_net_case(rng), rng) < 1e-4


# -- loss and optimizer --------------------------------------------------------------------


def test_mse_cases(rng):
    a = rng.standard_normal((3, 4))
    assert nn.mse_loss(a, a)[0] == 0.0
    loss, grad = nn.mse_loss(a + 2.0, a)
    assert abs(loss - 4.0) < 1e-12
    np.testing.assert_allclose(grad, 4.0 / 12)
    b = rng.standard_normal((3, 4))
    assert abs(nn.mse_loss(a, b)[0] - sum((a - b).ravel() ** 2) / 12) < 1e-12
    with pytest.raises(ValueError):
        nn.mse_loss(a, b[:2])


@pytest.mark.parametrize("g", [1e-3, 1e-2, 0.5, -7.0, 1e4])
def test_adam_first_step_is_lr_sign(g):
    p = {"w": np.array([0.0])}
    nn.adam_step(nn.AdamState(), p, {"w": np.array([g])})
    # bias corrections cancel exactly on step one: update = -lr g / (|g| + eps)
    assert abs(p["w"][0] - (-1e-3 * g / (abs(g) + 1e-8))) < 1e-15 * 1e-3
    # the distance from -lr sign(g) is lr eps / (|g| + eps), below 1e-6 lr once |g| >= 1e-2
    if abs(g) >= 1e-2:
        assert abs(p["w"][0] + 1e-3 * np.sign(g)) < 1e-6 * 1e-3


def test_adam_zero_gradient():
    state = nn.AdamState()
    p = {"w": np.array([1.5])}
    nn.adam_step(state, p, {"w": np.zeros(1)})
    assert p["w"][0] == 1.5 and state.t == 1


def test_adam_quadratic_descends():
    state = nn.AdamState(lr=1e-3)
    p = {"w": np.array([1.0])}
    trace = []
    for _ in range(100):
        nn.adam_step(state, p, {"w": 2 * p["w"]})
        trace.append(abs(p["w"][0]))
    assert all(b < a for a, b in zip(trace[2:], trace[3:]))


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError, match="'w'"):
        nn.adam_step(nn.AdamState(), {"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])})


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert nn.clip_grad_norm(g, 1.0) == 5.0
    np.testing.assert_allclose(np.hypot(g["a"], g["b"]), 1.0)
    g = {"a": np.array([0.3])}
    nn.clip_grad_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_grad_check_detects_wrong_gradient(rng):
    loss, p, g = dense_case(rng)
    g["W"] = g["W"] * 1.01
    assert nn.grad_check(loss, p, g, rng) > 1e-3
