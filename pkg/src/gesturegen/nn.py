"""Small deterministic neural network toolkit in double precision.

Layers are plain functions over numpy arrays: each ``*_forward`` returns its
output plus whatever the matching ``*_backward`` needs. Parameters live in
flat ``dict[str, ndarray]`` containers so the optimizer, gradient checker
and checkpoint writer can treat every model the same way.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based Philox stream; extra keys derive independent substreams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), *keys])))


# -- dense / relu ----------------------------------------------------------------


def _check_shape(x: np.ndarray, width: int, what: str) -> None:
    if x.shape[-1] != width:
        raise ValueError(f"{what}: expected width {width}, got {x.shape[-1]}")


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = x W^T + b for x of shape (batch, in)."""
    _check_shape(x, W.shape[1], "dense input")
    return x @ W.T + b


def dense_backward(W: np.ndarray, x: np.ndarray, dy: np.ndarray):
    """Return (dW, db, dx)."""
    return dy.T @ x, dy.sum(axis=0), dy @ W


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


# -- batch normalization -----------------------------------------------------------


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, width: int) -> "BatchNormState":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))


def batchnorm_forward(
    gamma: np.ndarray,
    beta: np.ndarray,
    state: BatchNormState,
    x: np.ndarray,
    train: bool,
    update_stats: bool = True,
):
    """Normalize columns of ``x``; returns (y, cache).

    In training mode batch statistics are used and (optionally) folded into
    the running estimates with the state's momentum.
    """
    if train:
        if x.shape[0] < 2:
            raise ValueError("batch normalization in training mode needs a batch of at least 2")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if update_stats:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1 - m) * mu
            state.running_var = m * state.running_var + (1 - m) * var
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, train)


def batchnorm_backward(gamma: np.ndarray, cache, dy: np.ndarray):
    """Return (dgamma, dbeta, dx)."""
    xhat, inv_std, train = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not train:
        return dgamma, dbeta, dxhat * inv_std
    n = dy.shape[0]
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dgamma, dbeta, dx


# -- dropout / noise -----------------------------------------------------------------


def dropout_forward(x: np.ndarray, p: float, rng: np.random.Generator | None, train: bool):
    """Inverted dropout; returns (y, mask). ``mask`` is None when inactive."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask, dy: np.ndarray) -> np.ndarray:
    return dy if mask is None else dy * mask


def add_gaussian_noise(
    x: np.ndarray, per_dim_std: np.ndarray, rng: np.random.Generator, scale: float = 0.05
) -> np.ndarray:
    """x + N(0, (scale * std_d)^2) noise, independent per element."""
    per_dim_std = np.asarray(per_dim_std, dtype=np.float64)
    _check_shape(x, per_dim_std.shape[0], "noise std")
    if scale == 0.0:
        return x.copy()
    return x + rng.standard_normal(x.shape) * (scale * per_dim_std)


# -- GRU -----------------------------------------------------------------------------

GRU_KEYS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GRUCache:
    x: np.ndarray
    h: np.ndarray  # (T + 1, B, H), h[0] = h0
    z: np.ndarray
    r: np.ndarray
    hc: np.ndarray  # candidate state


def gru_forward(p: dict, x_seq: np.ndarray, h0: np.ndarray | None = None):
    """Run a GRU over ``x_seq`` (T, B, in); returns (h_seq (T, B, H), cache).

    ``p`` maps W_z/W_r/W_h (H x in), U_* (H x H) and b_* (H,).
    """
    T, B, _ = x_seq.shape
    H = p["U_z"].shape[0]
    _check_shape(x_seq, p["W_z"].shape[1], "gru input")
    if h0 is None:
        h0 = np.zeros((B, H))
    W = np.concatenate([p["W_z"], p["W_r"], p["W_h"]])
    bias = np.concatenate([p["b_z"], p["b_r"], p["b_h"]])
    xw = (x_seq.reshape(T * B, -1) @ W.T + bias).reshape(T, B, 3 * H)
    U_zr = np.concatenate([p["U_z"], p["U_r"]]).T
    U_h = p["U_h"].T
    h = np.empty((T + 1, B, H))
    h[0] = h0
    z = np.empty((T, B, H))
    r = np.empty((T, B, H))
    hc = np.empty((T, B, H))
    for t in range(T):
        hp = h[t]
        zr = sigmoid(xw[t, :, : 2 * H] + hp @ U_zr)
        z[t], r[t] = zr[:, :H], zr[:, H:]
        hc[t] = np.tanh(xw[t, :, 2 * H :] + (r[t] * hp) @ U_h)
        h[t + 1] = (1.0 - z[t]) * hp + z[t] * hc[t]
    return h[1:].copy(), GRUCache(x_seq, h, z, r, hc)


def gru_backward(p: dict, cache: GRUCache, dh_seq: np.ndarray):
    """Backpropagation through time; returns (grads dict, dx_seq, dh0)."""
    x, h, z, r, hc = cache.x, cache.h, cache.z, cache.r, cache.hc
    T, B, H = dh_seq.shape
    da = np.empty((T, B, 3 * H))  # pre-activation grads for z, r, candidate
    dU_z = np.zeros_like(p["U_z"])
    dU_r = np.zeros_like(p["U_r"])
    dU_h = np.zeros_like(p["U_h"])
    U_zr = np.concatenate([p["U_z"], p["U_r"]])
    U_h = p["U_h"]
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        hp = h[t]
        dh = dh_seq[t] + dh_next
        dhc = dh * z[t]
        dz = dh * (hc[t] - hp)
        dh_prev = dh * (1.0 - z[t])
        da_h = dhc * (1.0 - hc[t] ** 2)
        rh = r[t] * hp
        dU_h += da_h.T @ rh
        drh = da_h @ U_h
        dr = drh * hp
        dh_prev += drh * r[t]
        da_z = dz * z[t] * (1.0 - z[t])
        da_r = dr * r[t] * (1.0 - r[t])
        da_zr = np.concatenate([da_z, da_r], axis=1)
        dU_zr = da_zr.T @ hp
        dU_z += dU_zr[:H]
        dU_r += dU_zr[H:]
        dh_prev += da_zr @ U_zr
        da[t, :, : 2 * H] = da_zr
        da[t, :, 2 * H :] = da_h
        dh_next = dh_prev
    flat_da = da.reshape(T * B, 3 * H)
    flat_x = x.reshape(T * B, -1)
    dW = flat_da.T @ flat_x
    db = flat_da.sum(axis=0)
    W = np.concatenate([p["W_z"], p["W_r"], p["W_h"]])
    dx = (flat_da @ W).reshape(x.shape)
    grads = {
        "W_z": dW[:H], "W_r": dW[H : 2 * H], "W_h": dW[2 * H :],
        "U_z": dU_z, "U_r": dU_r, "U_h": dU_h,
        "b_z": db[:H], "b_r": db[H : 2 * H], "b_h": db[2 * H :],
    }
    return grads, dx, dh_next


# -- loss --------------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# -- optimization ----------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam update of ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise FloatingPointError(f"non-finite gradient for {name!r} ({bad} entries) at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


# -- verification ----------------------------------------------------------------


def grad_check(
    loss_fn,
    params: dict,
    grads: dict,
    rng: np.random.Generator,
    eps: float = 1e-5,
    n_samples: int = 200,
    floor: float = 1e-6,
) -> float:
    """Max relative error between ``grads`` and central differences.

    ``loss_fn()`` must evaluate the loss deterministically from the current
    contents of ``params``; entries are perturbed in place and restored.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat in np.sort(picks):
        k = int(np.searchsorted(bounds, flat, side="right"))
        name = names[k]
        idx = np.unravel_index(int(flat - (bounds[k] - sizes[k])), params[name].shape)
        arr = params[name]
        orig = arr[idx]
        arr[idx] = orig + eps
        up = loss_fn()
        arr[idx] = orig - eps
        down = loss_fn()
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst


# -- initialization --------------------------------------------------------------


def glorot(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def he_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / in_dim)
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
