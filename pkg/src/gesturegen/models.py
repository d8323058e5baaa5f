"""The four networks: MotionE/MotionD (as one autoencoder), SpeechE and the
baseline, plus context windowing and the chained synthesis path."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .audio_features import FeatureKind, FeatureSequence
from .checkpoint import Checkpoint, CheckpointError, format_floats, parse_floats
from .motion_io import (
    MOTION_FEATURE_DIM,
    MOTION_FPS,
    MotionSequence,
    ScalerParams,
    features_to_positions,
)

CONTEXT = 30
HIDDEN = 256
DROPOUT = 0.1

MOTION_ED = "motion_ed"
SPEECH_E = "speech_e"
BASELINE = "baseline"


def build_context_windows(fs: FeatureSequence | np.ndarray, context: int = CONTEXT) -> np.ndarray:
    """Windows of ``2*context + 1`` frames centred on every frame.

    Returns an array of shape (T, 2C+1, D); out-of-range frames repeat the
    nearest edge frame.
    """
    data = fs.data if isinstance(fs, FeatureSequence) else np.asarray(fs, dtype=np.float64)
    t = data.shape[0]
    if t == 0:
        raise ValueError("cannot window an empty feature sequence")
    idx = np.clip(np.arange(t)[:, None] + np.arange(-context, context + 1)[None, :], 0, t - 1)
    return data[idx]


def temporal_delta(x: np.ndarray) -> np.ndarray:
    """Backward difference along time; the first row copies the second."""
    d = np.empty_like(x)
    if len(x) < 2:
        d[:] = 0.0
        return d
    d[1:] = x[1:] - x[:-1]
    d[0] = d[1]
    return d


# -- motion autoencoder ------------------------------------------------------------


@dataclass
class MotionED:
    """Affine encoder (384 -> d_z) and decoder (d_z -> 384)."""

    params: dict

    @classmethod
    def create(cls, d_z: int, rng: np.random.Generator, identity: bool = False, width: int = MOTION_FEATURE_DIM):
        if identity:
            if d_z != width:
                raise ValueError("identity initialization needs d_z equal to the input width")
            enc, dec = np.eye(width), np.eye(width)
        else:
            enc = nn.glorot(rng, d_z, width)
            dec = nn.glorot(rng, width, d_z)
        return cls({"enc.W": enc, "enc.b": np.zeros(d_z), "dec.W": dec, "dec.b": np.zeros(width)})

    @property
    def d_z(self) -> int:
        return self.params["enc.W"].shape[0]

    @property
    def width(self) -> int:
        return self.params["enc.W"].shape[1]

    def encode(self, m: np.ndarray) -> np.ndarray:
        return nn.dense_forward(self.params["enc.W"], self.params["enc.b"], m)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return nn.dense_forward(self.params["dec.W"], self.params["dec.b"], z)

    def forward(self, m: np.ndarray):
        z = self.encode(m)
        return z, self.decode(z)

    def backward(self, m_in: np.ndarray, z: np.ndarray, dm_hat: np.ndarray) -> dict:
        p = self.params
        dWd, dbd, dz = nn.dense_backward(p["dec.W"], z, dm_hat)
        dWe, dbe, _ = nn.dense_backward(p["enc.W"], m_in, dz)
        return {"enc.W": dWe, "enc.b": dbe, "dec.W": dWd, "dec.b": dbd}


def dae_forward(med: MotionED, m: np.ndarray, noise_std: np.ndarray | None = None, rng=None, noise_scale=0.05):
    """Encode (optionally noise-corrupted) motion rows and reconstruct them."""
    if m.shape[-1] != med.width:
        raise ValueError(f"motion rows must be {med.width} wide, got {m.shape[-1]}")
    m_in = m if noise_std is None else nn.add_gaussian_noise(m, noise_std, rng, noise_scale)
    z, m_hat = med.forward(m_in)
    return z, m_hat


def encode_motion(med: MotionED, motion_features: np.ndarray) -> np.ndarray:
    """Noise-free representation z for every frame."""
    if motion_features.shape[-1] != med.width:
        raise ValueError(f"motion rows must be {med.width} wide, got {motion_features.shape[-1]}")
    return med.encode(motion_features)


# -- speech networks --------------------------------------------------------------


@dataclass
class NetCache:
    shape: tuple
    steps: list = field(default_factory=list)
    gru: nn.GRUCache | None = None


class SpeechNet:
    """FC(256) x3 -> GRU(256) -> linear, with BN + ReLU + dropout between layers.

    Input is one flattened context window per frame, output is
    ``[value, delta value]`` per frame.
    """

    n_fc = 3

    def __init__(self, in_dim: int, out_dim: int, params: dict, bn: dict, hidden: int = HIDDEN, dropout: float = DROPOUT):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.dropout = dropout
        self.params = params
        self.bn = bn

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator, hidden: int = HIDDEN, dropout: float = DROPOUT):
        params = {}
        width = in_dim
        for i in range(1, cls.n_fc + 1):
            params[f"fc{i}.W"] = nn.he_uniform(rng, hidden, width)
            params[f"fc{i}.b"] = np.zeros(hidden)
            width = hidden
        for key in ("W_z", "W_r", "W_h"):
            params[f"gru.{key}"] = nn.glorot(rng, hidden, hidden)
        for key in ("U_z", "U_r", "U_h"):
            params[f"gru.{key}"] = nn.orthogonal(rng, hidden)
        for key in ("b_z", "b_r", "b_h"):
            params[f"gru.{key}"] = np.zeros(hidden)
        params["out.W"] = nn.glorot(rng, out_dim, hidden)
        params["out.b"] = np.zeros(out_dim)
        bn = {}
        for i in range(1, cls.n_fc + 2):
            state = nn.BatchNormState.create(hidden)
            params[f"bn{i}.gamma"] = state.gamma
            params[f"bn{i}.beta"] = state.beta
            bn[f"bn{i}"] = state
        return cls(in_dim, out_dim, params, bn, hidden, dropout)

    @property
    def value_dim(self) -> int:
        return self.out_dim // 2

    def _gru_params(self) -> dict:
        return {k: self.params[f"gru.{k}"] for k in nn.GRU_KEYS}

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None, update_stats: bool = True):
        """Map (T, B, in) inputs to (T, B, out); returns (y, cache)."""
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ValueError(f"expected (T, B, {self.in_dim}) input, got {x.shape}")
        T, B, _ = x.shape
        p = self.params
        cache = NetCache((T, B))
        h = x.reshape(T * B, self.in_dim)
        for i in range(1, self.n_fc + 1):
            a = nn.dense_forward(p[f"fc{i}.W"], p[f"fc{i}.b"], h)
            bn_out, bn_cache = nn.batchnorm_forward(
                p[f"bn{i}.gamma"], p[f"bn{i}.beta"], self.bn[f"bn{i}"], a, train, update_stats
            )
            act = nn.relu_forward(bn_out)
            h_next, mask = nn.dropout_forward(act, self.dropout, rng, train)
            cache.steps.append((h, bn_cache, bn_out, mask))
            h = h_next
        g, cache.gru = nn.gru_forward(self._gru_params(), h.reshape(T, B, self.hidden))
        k = self.n_fc + 1
        bn_out, bn_cache = nn.batchnorm_forward(
            p[f"bn{k}.gamma"], p[f"bn{k}.beta"], self.bn[f"bn{k}"], g.reshape(T * B, self.hidden), train, update_stats
        )
        d, mask = nn.dropout_forward(bn_out, self.dropout, rng, train)
        cache.steps.append((d, bn_cache, None, mask))
        y = nn.dense_forward(p["out.W"], p["out.b"], d)
        return y.reshape(T, B, self.out_dim), cache

    def backward(self, cache: NetCache, dy: np.ndarray) -> dict:
        T, B = cache.shape
        p = self.params
        grads = {}
        d, bn_cache, _, mask = cache.steps[-1]
        dW, db, dd = nn.dense_backward(p["out.W"], d, dy.reshape(T * B, self.out_dim))
        grads["out.W"], grads["out.b"] = dW, db
        k = self.n_fc + 1
        dbn = nn.dropout_backward(mask, dd)
        grads[f"bn{k}.gamma"], grads[f"bn{k}.beta"], dg = nn.batchnorm_backward(p[f"bn{k}.gamma"], bn_cache, dbn)
        gru_grads, dh, _ = nn.gru_backward(self._gru_params(), cache.gru, dg.reshape(T, B, self.hidden))
        for key, g in gru_grads.items():
            grads[f"gru.{key}"] = g
        dh = dh.reshape(T * B, self.hidden)
        for i in range(self.n_fc, 0, -1):
            h_in, bn_cache, bn_out, mask = cache.steps[i - 1]
            dact = nn.dropout_backward(mask, dh)
            dbn = nn.relu_backward(bn_out, dact)
            grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"], da = nn.batchnorm_backward(p[f"bn{i}.gamma"], bn_cache, dbn)
            grads[f"fc{i}.W"], grads[f"fc{i}.b"], dh = nn.dense_backward(p[f"fc{i}.W"], h_in, da)
        return grads

    def fc_features(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode activations entering the GRU, shape (N, hidden)."""
        p = self.params
        h = x
        for i in range(1, self.n_fc + 1):
            a = nn.dense_forward(p[f"fc{i}.W"], p[f"fc{i}.b"], h)
            bn_out, _ = nn.batchnorm_forward(p[f"bn{i}.gamma"], p[f"bn{i}.beta"], self.bn[f"bn{i}"], a, False)
            h = nn.relu_forward(bn_out)
        return h

    def predict(self, windows: np.ndarray) -> np.ndarray:
        """Inference over one utterance of context windows, (T, 2C+1, D) -> (T, out)."""
        flat = windows.reshape(windows.shape[0], -1)
        if flat.shape[1] != self.in_dim:
            raise ValueError(f"window width {flat.shape[1]} does not match network input {self.in_dim}")
        y, _ = self.forward(flat[:, None, :], train=False)
        return y[:, 0, :]

    def buffers(self) -> dict:
        out = {}
        for name, state in self.bn.items():
            out[f"{name}.running_mean"] = state.running_mean
            out[f"{name}.running_var"] = state.running_var
        return out

    def sync_bn(self) -> None:
        """Point BN states at the (possibly replaced) gamma/beta arrays."""
        for name, state in self.bn.items():
            state.gamma = self.params[f"{name}.gamma"]
            state.beta = self.params[f"{name}.beta"]


def net_forward(net: SpeechNet, windows: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
    if train:
        flat = windows.reshape(windows.shape[0], -1)
        y, _ = net.forward(flat[:, None, :], train=True, rng=rng)
        return y[:, 0, :]
    return net.predict(windows)


# -- chained synthesis --------------------------------------------------------------


@dataclass
class ChainedModel:
    speech_e: SpeechNet
    motion_ed: MotionED
    scaler: ScalerParams
    kind: FeatureKind

    def __post_init__(self):
        if self.speech_e.value_dim != self.motion_ed.d_z:
            raise ValueError(
                f"SpeechE predicts {self.speech_e.value_dim}-dim representations, decoder expects {self.motion_ed.d_z}"
            )


def _check_input(fs: FeatureSequence, kind: FeatureKind, net: SpeechNet) -> None:
    if fs.kind != kind:
        raise ValueError(f"model was trained on {kind.value} features, got {fs.kind.value}")
    if (2 * CONTEXT + 1) * fs.dims != net.in_dim:
        raise ValueError(f"feature width {fs.dims} does not match network input {net.in_dim}")


def synthesize(chain: ChainedModel, fs: FeatureSequence) -> MotionSequence:
    """Speech features -> SpeechE -> z -> MotionD -> joint positions (no smoothing)."""
    _check_input(fs, chain.kind, chain.speech_e)
    out = chain.speech_e.predict(build_context_windows(fs))
    z = out[:, : chain.motion_ed.d_z]
    return features_to_positions(chain.motion_ed.decode(z), chain.scaler, MOTION_FPS)


def synthesize_baseline(net: SpeechNet, scaler: ScalerParams, kind: FeatureKind, fs: FeatureSequence) -> MotionSequence:
    """Direct speech -> pose prediction; the velocity half is ignored."""
    _check_input(fs, kind, net)
    out = net.predict(build_context_windows(fs))
    return features_to_positions(out[:, : MOTION_FEATURE_DIM], scaler, MOTION_FPS)


# -- checkpoints --------------------------------------------------------------------


def _scaler_meta(scaler: ScalerParams) -> dict:
    return {"scaler.mean": format_floats(scaler.mean), "scaler.scale": format_floats(scaler.scale)}


def scaler_from_meta(meta: dict) -> ScalerParams:
    try:
        return ScalerParams(parse_floats(meta["scaler.mean"]), parse_floats(meta["scaler.scale"]))
    except KeyError:
        raise CheckpointError("checkpoint has no scaler parameters") from None


def _input_scaler_meta(scaler: ScalerParams | None) -> dict:
    if scaler is None:
        return {}
    return {"input.mean": format_floats(scaler.mean), "input.scale": format_floats(scaler.scale)}


def input_scaler_from_meta(meta: dict) -> ScalerParams | None:
    """Speech-feature standardization stored with a network, if any."""
    if "input.mean" not in meta:
        return None
    return ScalerParams(parse_floats(meta["input.mean"]), parse_floats(meta["input.scale"]))


def _optim_tensors(optim: nn.AdamState | None) -> dict:
    if optim is None:
        return {}
    out = {}
    for name in sorted(optim.m):
        out[f"adam.m.{name}"] = optim.m[name]
        out[f"adam.v.{name}"] = optim.v[name]
    return out


def _optim_meta(optim: nn.AdamState | None) -> dict:
    if optim is None:
        return {}
    return {"adam.lr": repr(optim.lr), "adam.beta1": repr(optim.beta1), "adam.beta2": repr(optim.beta2),
            "adam.eps": repr(optim.eps), "adam.t": str(optim.t)}


def _load_optim(ckpt: Checkpoint) -> nn.AdamState | None:
    meta = ckpt.meta
    if "adam.t" not in meta:
        return None
    state = nn.AdamState(float(meta["adam.lr"]), float(meta["adam.beta1"]), float(meta["adam.beta2"]),
                         float(meta["adam.eps"]), int(meta["adam.t"]))
    for key, arr in ckpt.tensors.items():
        if key.startswith("adam.m."):
            state.m[key[len("adam.m."):]] = arr.copy()
        elif key.startswith("adam.v."):
            state.v[key[len("adam.v."):]] = arr.copy()
    return state


def save_motion_ed(path, med: MotionED, scaler: ScalerParams, meta: dict | None = None, optim=None) -> None:
    m = {"model_kind": MOTION_ED, "d_z": str(med.d_z), "width": str(med.width)}
    m.update(meta or {})
    m.update(_optim_meta(optim))
    m.update(_scaler_meta(scaler))
    tensors = {k: med.params[k] for k in ("enc.W", "enc.b", "dec.W", "dec.b")}
    tensors.update(_optim_tensors(optim))
    Checkpoint(m, tensors).save(path)


def load_motion_ed(path):
    """Return (MotionED, scaler, meta, optimizer state)."""
    ckpt = Checkpoint.load(path)
    if ckpt.meta.get("model_kind") != MOTION_ED:
        raise CheckpointError(f"{path} is a {ckpt.meta.get('model_kind')} checkpoint, expected {MOTION_ED}")
    params = {k: ckpt.tensors[k].copy() for k in ("enc.W", "enc.b", "dec.W", "dec.b")}
    return MotionED(params), scaler_from_meta(ckpt.meta), ckpt.meta, _load_optim(ckpt)


def save_net(path, net: SpeechNet, model_kind: str, feature_kind: FeatureKind, scaler: ScalerParams,
             meta: dict | None = None, optim=None, input_scaler: ScalerParams | None = None) -> None:
    m = {
        "model_kind": model_kind,
        "feature_kind": FeatureKind(feature_kind).value,
        "in_dim": str(net.in_dim),
        "out_dim": str(net.out_dim),
        "hidden": str(net.hidden),
        "dropout": repr(net.dropout),
        "layers": ",".join(sorted(net.params)),
    }
    m.update(meta or {})
    m.update(_optim_meta(optim))
    m.update(_scaler_meta(scaler))
    m.update(_input_scaler_meta(input_scaler))
    tensors = {k: net.params[k] for k in sorted(net.params)}
    tensors.update({k: v for k, v in sorted(net.buffers().items())})
    tensors.update(_optim_tensors(optim))
    Checkpoint(m, tensors).save(path)


def load_net(path, expected_kind: str | None = None):
    """Return (SpeechNet, model kind, feature kind, scaler, meta, optimizer state)."""
    ckpt = Checkpoint.load(path)
    kind = ckpt.meta.get("model_kind")
    if kind not in (SPEECH_E, BASELINE):
        raise CheckpointError(f"{path} is not a speech network checkpoint (model_kind={kind})")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path} is a {kind} checkpoint, expected {expected_kind}")
    meta = ckpt.meta
    names = meta["layers"].split(",")
    params = {k: ckpt.tensors[k].copy() for k in names}
    hidden = int(meta["hidden"])
    bn = {}
    for i in range(1, SpeechNet.n_fc + 2):
        name = f"bn{i}"
        bn[name] = nn.BatchNormState(
            params[f"{name}.gamma"], params[f"{name}.beta"],
            ckpt.tensors[f"{name}.running_mean"].copy(), ckpt.tensors[f"{name}.running_var"].copy(),
        )
    net = SpeechNet(int(meta["in_dim"]), int(meta["out_dim"]), params, bn, hidden, float(meta["dropout"]))
    return net, kind, FeatureKind(meta["feature_kind"]), scaler_from_meta(meta), meta, _load_optim(ckpt)
