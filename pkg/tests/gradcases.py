"""Gradient-check cases shared by the unit and acceptance suites."""
import numpy as np

from gesturegen import nn
from gesturegen.models import SpeechNet


def _loss_against(target, fn):
    def loss():
        return nn.mse_loss(fn(), target)[0]

    return loss


def dense_case(rng):
    p = {"W": rng.standard_normal((4, 5)), "b": rng.standard_normal(4), "x": rng.standard_normal((3, 5))}
    target = rng.standard_normal((3, 4))
    loss = _loss_against(target, lambda: nn.dense_forward(p["W"], p["b"], p["x"]))
    y = nn.dense_forward(p["W"], p["b"], p["x"])
    dW, db, dx = nn.dense_backward(p["W"], p["x"], nn.mse_loss(y, target)[1])
    return loss, p, {"W": dW, "b": db, "x": dx}


def batchnorm_case(rng, train=True):
    state = nn.BatchNormState.create(5)
    state.running_mean = rng.standard_normal(5)
    state.running_var = rng.uniform(0.5, 2.0, 5)
    p = {"gamma": rng.uniform(0.5, 1.5, 5), "beta": rng.standard_normal(5), "x": rng.standard_normal((8, 5)) * 2 + 1}
    target = rng.standard_normal((8, 5))

    def fwd():
        return nn.batchnorm_forward(p["gamma"], p["beta"], state, p["x"], train, update_stats=False)

    y, cache = fwd()
    dg, db, dx = nn.batchnorm_backward(p["gamma"], cache, nn.mse_loss(y, target)[1])
    return _loss_against(target, lambda: fwd()[0]), p, {"gamma": dg, "beta": db, "x": dx}


def gru_case(rng, steps=4, hidden=6, n_in=3, batch=2):
    p = {}
    for k in ("W_z", "W_r", "W_h"):
        p[k] = rng.standard_normal((hidden, n_in)) * 0.5
    for k in ("U_z", "U_r", "U_h"):
        p[k] = rng.standard_normal((hidden, hidden)) * 0.5
    for k in ("b_z", "b_r", "b_h"):
        p[k] = rng.standard_normal(hidden) * 0.1
    inputs = {"x": rng.standard_normal((steps, batch, n_in)), "h0": rng.standard_normal((batch, hidden)) * 0.5}
    target = rng.standard_normal((steps, batch, hidden))
    allp = {**p, **inputs}

    def fwd():
        return nn.gru_forward({k: allp[k] for k in nn.GRU_KEYS}, allp["x"], allp["h0"])

    h, cache = fwd()
    grads, dx, dh0 = nn.gru_backward({k: allp[k] for k in nn.GRU_KEYS}, cache, nn.mse_loss(h, target)[1])
    return _loss_against(target, lambda: fwd()[0]), allp, {**grads, "x": dx, "h0": dh0}


def speech_net_case(rng, steps=4, batch=3, in_dim=61 * 4, out_dim=16):
    """Full FC/BN/ReLU/GRU/linear stack in inference mode (BN running statistics)."""
    net = SpeechNet.create(in_dim, out_dim, rng)
    for state in net.bn.values():
        state.running_mean = rng.standard_normal(state.running_mean.shape) * 0.1
        state.running_var = rng.uniform(0.5, 2.0, state.running_var.shape)
    x = rng.standard_normal((steps, batch, in_dim))
    target = rng.standard_normal((steps, batch, out_dim))
    y, cache = net.forward(x, train=False)
    grads = net.backward(cache, nn.mse_loss(y, target)[1])
    return _loss_against(target, lambda: net.forward(x, train=False)[0]), net.params, grads
