"""Deterministic synthetic speech/motion corpus with a known audio -> motion map.

Audio alternates low-level noise gaps with sawtooth "voiced" bursts whose
pitch glides within 100-300 Hz under a smooth random amplitude envelope.
Motion is produced by driving the arm joints (and a little of the chest)
of a fixed 64-joint skeleton with linear functions of the audio's own
20 fps energy and log-pitch tracks, smoothed by a 5-frame moving average.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import audio_features as af
from .motion_io import (
    Joint,
    JointRotationSequence,
    MotionSequence,
    Skeleton,
    forward_kinematics,
    write_motion_csv,
)
from .nn import make_rng
from .wav import AudioBuffer, quantize_pcm16, write_wav

GAP_RMS = 0.002
# drive_e = max(0, energy - ENERGY_FLOOR); the floor sits at half the gap RMS
ENERGY_FLOOR = float(np.log(GAP_RMS / 2)) - 3.0
SMOOTH_FRAMES = 5

_STREAM_AUDIO = 1
_STREAM_MAPPING = 2
_STREAM_SPLIT = 3


@dataclass(frozen=True)
class SynthSpec:
    n_utterances: int = 50
    min_duration: float = 3.0
    max_duration: float = 6.0
    sample_rate: int = 16000
    seed: int = 42
    n_train: int = 40
    n_val: int = 5
    n_test: int = 5

    def __post_init__(self):
        if self.min_duration < 2.0 or self.max_duration < self.min_duration:
            raise ValueError("durations must be >= 2 s and min <= max")
        if self.n_train + self.n_val + self.n_test > self.n_utterances:
            raise ValueError("split counts exceed the number of utterances")


def utterance_id(i: int) -> str:
    return f"utt{i:04d}"


# -- skeleton ---------------------------------------------------------------------


def synthetic_skeleton() -> Skeleton:
    """A 64-joint humanoid: spine/head, two arms with four fingers each, two legs."""
    rot = ["Zrotation", "Xrotation", "Yrotation"]
    J = [Joint("Hips", -1, np.zeros(3), ["Xposition", "Yposition", "Zposition"] + rot)]

    def add(name, parent, offset, end=False):
        J.append(Joint(name, parent, np.array(offset, dtype=float), [] if end else list(rot)))
        return len(J) - 1

    spine = add("Spine", 0, (0, 1.0, 0))
    spine1 = add("Spine1", spine, (0, 1.0, 0))
    chest = add("Spine2", spine1, (0, 1.0, 0))
    neck = add("Neck", chest, (0, 0.8, 0))
    head = add("Head", neck, (0, 0.5, 0))
    add("Head_End", head, (0, 0.8, 0), end=True)
    add("Jaw", head, (0, -0.1, 0.3), end=True)
    add("LeftEye", head, (0.15, 0.3, 0.3), end=True)
    add("RightEye", head, (-0.15, 0.3, 0.3), end=True)
    for side, sx in (("Left", 1.0), ("Right", -1.0)):
        sh = add(f"{side}Shoulder", chest, (sx * 0.4, 0.6, 0))
        arm = add(f"{side}Arm", sh, (sx * 0.8, 0, 0))
        fore = add(f"{side}ForeArm", arm, (0, -1.4, 0))
        hand = add(f"{side}Hand", fore, (0, -1.2, 0))
        idx1 = add(f"{side}HandIndex1", hand, (sx * 0.05, -0.3, 0.05))
        add(f"{side}HandIndex_End", idx1, (0, -0.25, 0), end=True)
        for finger, dx in (("Thumb", 0.12), ("Middle", 0.0), ("Ring", -0.05), ("Pinky", -0.1)):
            p = add(f"{side}Hand{finger}1", hand, (sx * dx, -0.3, 0.1 if finger == "Thumb" else 0.0))
            p = add(f"{side}Hand{finger}2", p, (0, -0.15, 0))
            p = add(f"{side}Hand{finger}3", p, (0, -0.1, 0))
            add(f"{side}Hand{finger}_End", p, (0, -0.08, 0), end=True)
    for side, sx in (("Left", 1.0), ("Right", -1.0)):
        up = add(f"{side}UpLeg", 0, (sx * 0.5, -0.2, 0))
        leg = add(f"{side}Leg", up, (0, -2.0, 0))
        foot = add(f"{side}Foot", leg, (0, -2.0, 0))
        toe = add(f"{side}ToeBase", foot, (0, -0.2, 0.5))
        add(f"{side}Toe_End", toe, (0, 0, 0.3), end=True)
    skel = Skeleton(J)
    assert len(skel) == 64, len(skel)
    return skel


DRIVEN_JOINTS = (
    "Spine2",
    "LeftShoulder", "LeftArm", "LeftForeArm", "LeftHand",
    "RightShoulder", "RightArm", "RightForeArm", "RightHand",
)


@dataclass(frozen=True)
class DriveMapping:
    """angle = gain_e * drive_e + gain_p * drive_p + bias (degrees), per channel."""

    joints: tuple[str, ...]
    gain_e: np.ndarray  # (n_driven, 3)
    gain_p: np.ndarray
    bias: np.ndarray


def drive_mapping(spec: SynthSpec) -> DriveMapping:
    rng = make_rng(spec.seed, _STREAM_MAPPING)
    n = len(DRIVEN_JOINTS)
    gain_e = rng.uniform(2.5, 6.0, (n, 3)) * rng.choice([-1.0, 1.0], (n, 3))
    gain_p = rng.uniform(2.5, 7.0, (n, 3)) * rng.choice([-1.0, 1.0], (n, 3))
    bias = rng.uniform(-10.0, 10.0, (n, 3))
    # the chest only sways a little
    gain_e[0] *= 0.15
    gain_p[0] *= 0.15
    bias[0] = 0.0
    return DriveMapping(DRIVEN_JOINTS, gain_e, gain_p, bias)


# -- audio ------------------------------------------------------------------------


def _durations(spec: SynthSpec) -> np.ndarray:
    rng = make_rng(spec.seed, _STREAM_AUDIO, 0)
    raw = rng.uniform(spec.min_duration, spec.max_duration, spec.n_utterances)
    # whole motion frames so every feature stream lands on the same length
    return np.round(raw * af.MOTION_FPS) / af.MOTION_FPS


def _smooth_envelope(rng, n: int, sr: int, lo=0.1, hi=0.6, knot_s=0.15) -> np.ndarray:
    n_knots = max(2, int(np.ceil(n / (knot_s * sr))) + 1)
    knots = rng.uniform(lo, hi, n_knots)
    pos = np.arange(n) / (knot_s * sr)
    k = np.minimum(pos.astype(int), n_knots - 2)
    f = pos - k
    s = f * f * (3.0 - 2.0 * f)  # smoothstep: C1 between knots
    return knots[k] * (1.0 - s) + knots[k + 1] * s


def gen_audio(spec: SynthSpec, index: int, gain: float = 1.0) -> AudioBuffer:
    """Audio for utterance ``index``; bit-identical for the same (seed, index).

    Samples are quantized to the 16-bit grid so the corpus WAV files decode
    back to exactly this buffer.
    """
    sr = spec.sample_rate
    n = int(round(_durations(spec)[index] * sr))
    rng = make_rng(spec.seed, _STREAM_AUDIO, index + 1)
    x = rng.standard_normal(n) * GAP_RMS
    pos = int(rng.uniform(0.1, 0.4) * sr)
    fade = int(0.01 * sr)
    while pos < n:
        seg = min(int(rng.uniform(0.3, 1.0) * sr), n - pos)
        if seg > 2 * fade:
            f_start, f_end = rng.uniform(100.0, 300.0, 2)
            freq = np.linspace(f_start, f_end, seg)
            phase = np.cumsum(freq) / sr + rng.uniform()
            saw = 2.0 * (phase % 1.0) - 1.0
            env = _smooth_envelope(rng, seg, sr)
            ramp = np.ones(seg)
            ramp[:fade] = np.linspace(0.0, 1.0, fade)
            ramp[-fade:] = np.linspace(1.0, 0.0, fade)
            x[pos : pos + seg] = saw * env * ramp + x[pos : pos + seg] * (1.0 - ramp)
        pos += seg + int(rng.uniform(0.1, 0.4) * sr)
    pcm = quantize_pcm16(np.clip(x * gain, -1.0, 1.0))
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, sr)


# -- motion ------------------------------------------------------------------------


def moving_average(x: np.ndarray, width: int = SMOOTH_FRAMES) -> np.ndarray:
    """Centred moving average along axis 0 with edge replication."""
    half = width // 2
    padded = np.concatenate([np.repeat(x[:1], half, axis=0), x, np.repeat(x[-1:], half, axis=0)])
    c = np.cumsum(np.concatenate([np.zeros((1,) + x.shape[1:]), padded]), axis=0)
    return (c[width:] - c[:-width]) / width


def drive_signals(audio: AudioBuffer) -> np.ndarray:
    """Smoothed (energy, log-pitch) drives at 20 fps, shape (T, 2)."""
    pros = af.extract_features(audio, af.FeatureKind.PROSODIC).data
    drive_e = np.maximum(pros[:, 0] - ENERGY_FLOOR, 0.0)
    drive_p = pros[:, 2]
    return moving_average(np.column_stack([drive_e, drive_p]))


def joint_angles(spec: SynthSpec, audio: AudioBuffer) -> np.ndarray:
    """Euler angles (degrees) of the driven joints, shape (T, n_driven, 3)."""
    mapping = drive_mapping(spec)
    d = drive_signals(audio)
    return d[:, 0, None, None] * mapping.gain_e + d[:, 1, None, None] * mapping.gain_p + mapping.bias


def gen_motion(spec: SynthSpec, audio: AudioBuffer) -> MotionSequence:
    """Oracle motion for ``audio``: driven joint angles through forward kinematics."""
    skel = synthetic_skeleton()
    angles = joint_angles(spec, audio)
    t = angles.shape[0]
    frames = np.zeros((t, skel.n_channels))
    slices = dict(zip(skel.names, skel.channel_slices()))
    for k, name in enumerate(DRIVEN_JOINTS):
        frames[:, slices[name]] = angles[:, k, :]
    return forward_kinematics(skel, JointRotationSequence(frames, 1.0 / af.MOTION_FPS))


# -- corpus on disk ------------------------------------------------------------------


def split_ids(ids: list[str], counts: tuple[int, int, int], seed: int) -> dict[str, list[str]]:
    """Seeded shuffle, then consecutive train/validation/test partitions."""
    n_train, n_val, n_test = counts
    if n_train + n_val + n_test > len(ids):
        raise ValueError(f"split needs {n_train + n_val + n_test} utterances, only {len(ids)} available")
    if len(set(ids)) != len(ids):
        raise ValueError("utterance ids must be unique")
    order = make_rng(seed, _STREAM_SPLIT).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return {
        "train": shuffled[:n_train],
        "validation": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val : n_train + n_val + n_test],
    }


def write_split(path: str | os.PathLike, split: dict[str, list[str]]) -> None:
    lines = [f"{name}={','.join(ids)}" for name, ids in split.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def gen_corpus(spec: SynthSpec, out_dir: str | os.PathLike) -> Path:
    """Write ``wav/``, ``motion/``, ``split.txt``, ``joints.txt`` and ``synth.cfg``."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "motion").mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(spec.n_utterances):
        uid = utterance_id(i)
        audio = gen_audio(spec, i)
        motion = gen_motion(spec, audio)
        _atomic(out / "wav" / f"{uid}.wav", lambda p: write_wav(p, audio))
        _atomic(out / "motion" / f"{uid}.csv", lambda p: write_motion_csv(p, motion))
        ids.append(uid)
    write_split(out / "split.txt", split_ids(ids, (spec.n_train, spec.n_val, spec.n_test), spec.seed))
    (out / "joints.txt").write_text("\n".join(synthetic_skeleton().names) + "\n")
    (out / "synth.cfg").write_text("".join(f"{k}={v}\n" for k, v in asdict(spec).items()))
    return out
