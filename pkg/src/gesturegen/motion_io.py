"""BVH parsing, forward kinematics and motion feature assembly."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_JOINTS = 64
MOTION_FPS = 20.0
MOTION_FEATURE_DIM = 2 * 3 * N_JOINTS  # 384

ROTATION_ORDERS = {"ZXY", "ZYX", "XYZ", "XZY", "YXZ", "YZX"}
_ROT_CHANNELS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_POS_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


class BVHParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Joint:
    name: str
    parent: int
    offset: np.ndarray
    channels: list[str] = field(default_factory=list)

    @property
    def rotation_order(self) -> str:
        return "".join(_ROT_CHANNELS[c] for c in self.channels if c in _ROT_CHANNELS)

    @property
    def is_end_site(self) -> bool:
        return not self.channels and self.name.endswith("_End")


@dataclass
class Skeleton:
    joints: list[Joint]

    def __post_init__(self):
        roots = [j for j in self.joints if j.parent == -1]
        if len(roots) != 1 or self.joints[0].parent != -1:
            raise ValueError("skeleton must have exactly one root at index 0")
        for i, j in enumerate(self.joints):
            if j.parent >= i:
                raise ValueError(f"joint {j.name} is not topologically ordered")
            order = j.rotation_order
            if order and order not in ROTATION_ORDERS:
                raise ValueError(f"joint {j.name}: unsupported rotation order {order}")

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    @property
    def parents(self) -> np.ndarray:
        return np.array([j.parent for j in self.joints])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    @property
    def n_channels(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    def channel_slices(self) -> list[slice]:
        out, start = [], 0
        for j in self.joints:
            out.append(slice(start, start + len(j.channels)))
            start += len(j.channels)
        return out


@dataclass
class JointRotationSequence:
    frames: np.ndarray  # T x total channels
    frame_time: float

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time


@dataclass
class MotionSequence:
    """Global joint positions, shape (T, n_joints, 3)."""

    positions: np.ndarray
    fps: float = MOTION_FPS

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError("positions must have shape (T, n, 3)")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        self.positions = pos
        self.fps = float(self.fps)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n_joints(self) -> int:
        return self.positions.shape[1]

    def flat(self) -> np.ndarray:
        return self.positions.reshape(len(self), -1)


# -- BVH parsing ---------------------------------------------------------------


def _tokens(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            yield lineno, tok


class _Stream:
    def __init__(self, text: str):
        self._toks = list(_tokens(text))
        self._i = 0

    @property
    def line(self) -> int | None:
        if self._i < len(self._toks):
            return self._toks[self._i][0]
        return self._toks[-1][0] if self._toks else None

    def peek(self) -> str | None:
        return self._toks[self._i][1] if self._i < len(self._toks) else None

    def next(self, what: str = "token") -> str:
        if self._i >= len(self._toks):
            raise BVHParseError(f"unexpected end of file, expected {what}", self.line)
        tok = self._toks[self._i][1]
        self._i += 1
        return tok

    def expect(self, value: str) -> None:
        line = self.line
        tok = self.next(repr(value))
        if tok != value:
            raise BVHParseError(f"expected {value!r}, found {tok!r}", line)

    def number(self, what: str = "number") -> float:
        line = self.line
        tok = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise BVHParseError(f"expected {what}, found {tok!r}", line) from None

    def integer(self, what: str) -> int:
        line = self.line
        tok = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise BVHParseError(f"expected {what}, found {tok!r}", line) from None


def _parse_joint(s: _Stream, joints: list[Joint], parent: int, name: str) -> None:
    s.expect("{")
    s.expect("OFFSET")
    offset = np.array([s.number("offset") for _ in range(3)])
    channels: list[str] = []
    if s.peek() == "CHANNELS":
        s.next()
        line = s.line
        n = s.integer("channel count")
        for _ in range(n):
            line = s.line
            c = s.next("channel name")
            if c not in _ROT_CHANNELS and c not in _POS_CHANNELS:
                raise BVHParseError(f"unknown channel {c!r}", line)
            channels.append(c)
        n_rot = sum(c in _ROT_CHANNELS for c in channels)
        if n_rot not in (0, 3):
            raise BVHParseError(f"joint {name} needs 0 or 3 rotation channels, has {n_rot}", line)
    idx = len(joints)
    joints.append(Joint(name, parent, offset, channels))
    while True:
        line = s.line
        tok = s.next("'}' or child joint")
        if tok == "}":
            return
        if tok == "JOINT":
            _parse_joint(s, joints, idx, s.next("joint name"))
        elif tok == "End":
            s.expect("Site")
            s.expect("{")
            s.expect("OFFSET")
            end = np.array([s.number("offset") for _ in range(3)])
            s.expect("}")
            joints.append(Joint(f"{name}_End", idx, end, []))
        else:
            raise BVHParseError(f"unexpected token {tok!r} in joint {name}", line)


def parse_bvh(text: str) -> tuple[Skeleton, JointRotationSequence]:
    """Parse a BVH document into a skeleton and its channel matrix.

    Joints are listed in depth-first document order; End Sites become
    zero-channel joints named ``<parent>_End``.
    """
    s = _Stream(text)
    s.expect("HIERARCHY")
    line = s.line
    tok = s.next("ROOT")
    if tok != "ROOT":
        raise BVHParseError(f"expected 'ROOT', found {tok!r}", line)
    joints: list[Joint] = []
    _parse_joint(s, joints, -1, s.next("root name"))
    line = s.line
    tok = s.next("MOTION")
    if tok != "MOTION":
        raise BVHParseError(f"expected 'MOTION', found {tok!r}", line)
    s.expect("Frames:")
    n_frames = s.integer("frame count")
    s.expect("Frame")
    s.expect("Time:")
    frame_time = s.number("frame time")
    if frame_time <= 0:
        raise BVHParseError("frame time must be positive", s.line)
    try:
        skel = Skeleton(joints)
    except ValueError as exc:
        raise BVHParseError(str(exc)) from None

    # frame rows are line-oriented, so validate widths per physical line
    lines = text.splitlines()
    motion_line = next(i for i, ln in enumerate(lines) if ln.strip().startswith("Frame Time"))
    width = skel.n_channels
    rows = []
    for i in range(motion_line + 1, len(lines)):
        raw = lines[i].split()
        if not raw:
            continue
        if len(raw) != width:
            raise BVHParseError(f"frame row has {len(raw)} values, expected {width}", i + 1)
        try:
            rows.append([float(v) for v in raw])
        except ValueError:
            raise BVHParseError("non-numeric value in frame row", i + 1) from None
    if len(rows) != n_frames:
        raise BVHParseError(f"header declares {n_frames} frames, found {len(rows)}", len(lines))
    frames = np.array(rows, dtype=np.float64).reshape(n_frames, width)
    return skel, JointRotationSequence(frames, frame_time)


def load_bvh(path: str | os.PathLike) -> tuple[Skeleton, JointRotationSequence]:
    return parse_bvh(Path(path).read_text())


# -- kinematics ------------------------------------------------------------------


def axis_rotation(axis: str, degrees: np.ndarray) -> np.ndarray:
    """Rotation matrices about a principal axis, shape (..., 3, 3)."""
    a = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(a), np.zeros_like(a)
    if axis == "X":
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == "Y":
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    elif axis == "Z":
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def euler_to_matrix(angles: np.ndarray, order: str) -> np.ndarray:
    """Compose per-axis rotations in channel order: R = R_a0 @ R_a1 @ R_a2."""
    angles = np.asarray(angles, dtype=np.float64)
    out = axis_rotation(order[0], angles[..., 0])
    for k in (1, 2):
        out = out @ axis_rotation(order[k], angles[..., k])
    return out


def forward_kinematics(skel: Skeleton, rot: JointRotationSequence) -> MotionSequence:
    """Global joint positions for every frame.

    ``G_i = G_parent @ [R_i | offset_i + translation_i]`` and the position of
    joint ``i`` is the translation part of ``G_i``.
    """
    frames = rot.frames
    if frames.ndim != 2 or frames.shape[1] != skel.n_channels:
        raise ValueError(f"rotation matrix has {frames.shape[-1]} columns, skeleton needs {skel.n_channels}")
    t = frames.shape[0]
    n = len(skel)
    pos = np.zeros((t, n, 3))
    glob_rot = np.zeros((t, n, 3, 3))
    for i, (joint, sl) in enumerate(zip(skel.joints, skel.channel_slices())):
        chans = joint.channels
        local_t = np.broadcast_to(joint.offset, (t, 3)).copy()
        for c_idx, c in enumerate(chans):
            if c in _POS_CHANNELS:
                local_t[:, _POS_CHANNELS[c]] += frames[:, sl.start + c_idx]
        order = joint.rotation_order
        if order:
            cols = [sl.start + k for k, c in enumerate(chans) if c in _ROT_CHANNELS]
            local_r = euler_to_matrix(frames[:, cols], order)
        else:
            local_r = np.broadcast_to(np.eye(3), (t, 3, 3))
        if joint.parent < 0:
            pos[:, i] = local_t
            glob_rot[:, i] = local_r
        else:
            p = joint.parent
            pos[:, i] = pos[:, p] + np.einsum("tij,tj->ti", glob_rot[:, p], local_t)
            glob_rot[:, i] = glob_rot[:, p] @ local_r
    return MotionSequence(pos, rot.fps)


def rest_pose(skel: Skeleton) -> np.ndarray:
    """Joint positions with all channels zero, shape (n, 3)."""
    zero = JointRotationSequence(np.zeros((1, skel.n_channels)), 1.0)
    return forward_kinematics(skel, zero).positions[0]


def resample(m: MotionSequence, target_fps: float = MOTION_FPS) -> MotionSequence:
    """Linearly interpolate positions at ``k / target_fps`` timestamps."""
    if target_fps > m.fps + 1e-9:
        raise ValueError(f"cannot upsample from {m.fps} to {target_fps} fps")
    if abs(target_fps - m.fps) <= 1e-9:
        return MotionSequence(m.positions.copy(), m.fps)
    t = len(m)
    n_out = int(np.floor((t - 1) * target_fps / m.fps + 1e-9)) + 1
    src = np.arange(n_out) * (m.fps / target_fps)
    lo = np.minimum(np.floor(src + 1e-9).astype(int), t - 1)
    hi = np.minimum(lo + 1, t - 1)
    w = np.clip(src - lo, 0.0, 1.0)[:, None, None]
    pos = (1.0 - w) * m.positions[lo] + w * m.positions[hi]
    return MotionSequence(pos, target_fps)


def pose_velocity(m: MotionSequence) -> np.ndarray:
    """Frame-to-frame position differences, shape (T, 3n); row 0 copies row 1."""
    if len(m) < 2:
        raise ValueError("velocity needs at least two frames")
    flat = m.flat()
    vel = np.empty_like(flat)
    vel[1:] = flat[1:] - flat[:-1]
    vel[0] = vel[1]
    return vel


# -- standardization --------------------------------------------------------------


@dataclass(frozen=True)
class ScalerParams:
    """Per-dimension centring and max-abs scaling."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / self.scale

    def invert(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.scale + self.mean


def fit_scaler(rows: np.ndarray) -> ScalerParams:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("fit_scaler needs a non-empty 2-D matrix")
    mean = rows.mean(axis=0)
    scale = np.abs(rows - mean).max(axis=0)
    # constant columns (up to rounding of the mean) carry no signal
    degenerate = scale <= 1e-9 * np.maximum(1.0, np.abs(mean))
    scale = np.where(degenerate, 1.0, scale)
    return ScalerParams(mean, scale)


def raw_motion_features(m: MotionSequence) -> np.ndarray:
    """[positions, velocities] before standardization, shape (T, 6n)."""
    return np.hstack([m.flat(), pose_velocity(m)])


def assemble_motion_features(m: MotionSequence, scaler: ScalerParams) -> np.ndarray:
    """Standardized 384-dim pose + velocity rows for a 64-joint sequence."""
    if m.n_joints != N_JOINTS:
        raise ValueError(f"expected {N_JOINTS} joints, got {m.n_joints}")
    return scaler.apply(raw_motion_features(m))


def features_to_positions(features: np.ndarray, scaler: ScalerParams, fps: float = MOTION_FPS) -> MotionSequence:
    """Destandardize and keep the position half of motion feature rows."""
    raw = scaler.invert(features)
    half = raw.shape[1] // 2
    return MotionSequence(raw[:, :half].reshape(len(raw), -1, 3), fps)


# -- motion CSV ----------------------------------------------------------------


def write_motion_csv(path: str | os.PathLike, m: MotionSequence, extra_header: dict | None = None) -> None:
    lines = [f"# fps={m.fps:g} joints={m.n_joints}"]
    if extra_header:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in extra_header.items()))
    for t, row in enumerate(m.flat()):
        lines.append(f"{t}," + ",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_motion_csv(path: str | os.PathLike) -> MotionSequence:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing motion header")
    meta = dict(tok.split("=", 1) for tok in text[0][1:].split())
    n = int(meta["joints"])
    rows = [line.split(",")[1:] for line in text[1:] if line and not line.startswith("#")]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), n, 3)
    return MotionSequence(data, float(meta["fps"]))
