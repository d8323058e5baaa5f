"""Objective measures: average position error, acceleration/jerk statistics
and equal-width acceleration histograms, plus CSV/SVG report output.

Acceleration and jerk are per-frame quantities (length units / frame^k at
the sequence frame rate), never converted to per-second values.
"""
from __future__ import annotations

import fnmatch
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .motion_io import MotionSequence

REPORT_COLUMNS = ("condition", "ape_mean", "ape_sd", "acc_mean", "acc_sd", "jerk_mean", "jerk_sd")
DEFAULT_BIN_WIDTH = 0.05

# name patterns (fnmatch, case-insensitive) for the joint groups of the report
DEFAULT_GROUP_PATTERNS = {
    "hands": ["*hand"],
    "shoulders": ["*shoulder"],
}


@dataclass(frozen=True)
class JointGroup:
    name: str
    indices: tuple[int, ...]

    def __post_init__(self):
        if not self.indices:
            raise ValueError(f"joint group {self.name!r} is empty")
        if min(self.indices) < 0:
            raise ValueError("joint indices must be non-negative")


def joint_group(name: str, joint_names: list[str], patterns: dict | None = None) -> JointGroup:
    """Resolve a group by matching joint names; ``all`` selects every joint."""
    if name == "all":
        return JointGroup("all", tuple(range(len(joint_names))))
    pats = (patterns or DEFAULT_GROUP_PATTERNS).get(name)
    if pats is None:
        raise ValueError(f"unknown joint group {name!r}")
    idx = [i for i, j in enumerate(joint_names) if any(fnmatch.fnmatch(j.lower(), p.lower()) for p in pats)]
    return JointGroup(name, tuple(idx))


def _check_pair(truth: MotionSequence, pred: MotionSequence) -> None:
    if truth.positions.shape != pred.positions.shape:
        raise ValueError(f"shape mismatch: {truth.positions.shape} vs {pred.positions.shape}")
    if truth.fps != pred.fps:
        raise ValueError(f"fps mismatch: {truth.fps} vs {pred.fps}")


def ape(truth: MotionSequence, pred: MotionSequence) -> float:
    """Mean over frames and joints of the per-joint Euclidean distance."""
    _check_pair(truth, pred)
    return float(np.linalg.norm(truth.positions - pred.positions, axis=2).mean())


def derivative_magnitudes(m: MotionSequence | np.ndarray, order: int) -> np.ndarray:
    """Per-joint norms of the ``order``-th forward difference, shape (T - order, n)."""
    pos = m.positions if isinstance(m, MotionSequence) else np.asarray(m, dtype=np.float64)
    if order < 1:
        raise ValueError("order must be >= 1")
    if pos.shape[0] <= order:
        raise ValueError(f"need more than {order} frames, got {pos.shape[0]}")
    return np.linalg.norm(np.diff(pos, n=order, axis=0), axis=2)


def avg_stat(m: MotionSequence, order: int, joints: JointGroup | None = None) -> float:
    """Mean acceleration (order 2) or jerk (order 3) magnitude."""
    mags = derivative_magnitudes(m, order)
    if joints is not None:
        mags = mags[:, list(joints.indices)]
    return float(mags.mean())


def static_mean_pose(train: list[MotionSequence]) -> np.ndarray:
    """Mean joint positions over every frame of the given sequences, (n, 3)."""
    return np.concatenate([m.positions for m in train]).mean(axis=0)


def static_prediction(pose: np.ndarray, like: MotionSequence) -> MotionSequence:
    return MotionSequence(np.broadcast_to(pose, like.positions.shape).copy(), like.fps)


@dataclass
class Histogram:
    bin_width: float
    left_edges: np.ndarray
    frequencies: np.ndarray
    count: int


def acceleration_histogram(
    ms: list[MotionSequence], group: JointGroup | None = None, bin_width: float = DEFAULT_BIN_WIDTH,
    max_value: float | None = None,
) -> Histogram:
    """Relative frequencies of pooled acceleration magnitudes in bins [k w, (k+1) w).

    The bins cover ``[0, max_value]`` (default: the observed maximum).
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    pooled = []
    for m in ms:
        mags = derivative_magnitudes(m, 2)
        if group is not None:
            mags = mags[:, list(group.indices)]
        pooled.append(mags.ravel())
    values = np.concatenate(pooled) if pooled else np.zeros(0)
    if values.size == 0:
        raise ValueError("no acceleration samples to histogram")
    top = values.max() if max_value is None else max(max_value, values.max())
    n_bins = int(np.floor(top / bin_width)) + 1
    counts = np.bincount(np.floor(values / bin_width).astype(int), minlength=n_bins)
    return Histogram(bin_width, np.arange(len(counts)) * bin_width, counts / values.size, int(values.size))


# -- reporting ------------------------------------------------------------------------


@dataclass
class ConditionResult:
    """Per-run (or per-utterance) scores of one condition."""

    ape: list[float] = field(default_factory=list)
    acc: list[float] = field(default_factory=list)
    jerk: list[float] = field(default_factory=list)


def mean_sd(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class EvaluationReport:
    conditions: dict[str, ConditionResult] = field(default_factory=dict)
    histograms: dict[str, dict[str, Histogram]] = field(default_factory=dict)  # group -> condition -> hist
    metadata: dict[str, str] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for name, res in self.conditions.items():
            a, a_sd = mean_sd(res.ape)
            c, c_sd = mean_sd(res.acc)
            j, j_sd = mean_sd(res.jerk)
            out.append(dict(zip(REPORT_COLUMNS, (name, a, a_sd, c, c_sd, j, j_sd))))
        return out


def evaluate_condition(truth: list[MotionSequence], pred: list[MotionSequence]) -> ConditionResult:
    res = ConditionResult()
    for t, p in zip(truth, pred, strict=True):
        res.ape.append(ape(t, p))
        res.acc.append(avg_stat(p, 2))
        res.jerk.append(avg_stat(p, 3))
    return res


def _ensure_writable(path: Path) -> None:
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise OSError(f"cannot write to {path}")


def write_report_csv(path: str | os.PathLike, report: EvaluationReport) -> None:
    if not report.conditions:
        raise ValueError("report has no conditions")
    path = Path(path)
    _ensure_writable(path)
    lines = []
    for k, v in report.metadata.items():
        lines.append(f"# {k}={v}")
    lines.append("# units: ape=length, acc=length/frame^2, jerk=length/frame^3")
    lines.append(",".join(REPORT_COLUMNS))
    for row in report.rows():
        lines.append(",".join([row["condition"]] + [f"{row[c]:.9g}" for c in REPORT_COLUMNS[1:]]))
    path.write_text("\n".join(lines) + "\n")


def read_report_csv(path: str | os.PathLike) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def write_histogram_csv(path: str | os.PathLike, report: EvaluationReport) -> None:
    path = Path(path)
    _ensure_writable(path)
    lines = ["group,condition,bin_left_edge,relative_frequency"]
    for group, hists in report.histograms.items():
        for cond, h in hists.items():
            for edge, f in zip(h.left_edges, h.frequencies):
                lines.append(f"{group},{cond},{edge:.9g},{f:.9g}")
    path.write_text("\n".join(lines) + "\n")


def write_histogram_svg(path: str | os.PathLike, hists: dict[str, Histogram], title: str = "") -> None:
    """Line plot with one polyline per condition (bin centres vs frequency)."""
    if not hists:
        raise ValueError("report has no conditions")
    path = Path(path)
    _ensure_writable(path)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for cond, h in hists.items():
        (line,) = ax.plot(h.left_edges + h.bin_width / 2, h.frequencies, label=cond)
        line.set_gid(f"condition-{cond}")
    ax.set_xlabel("acceleration (length / frame$^2$)")
    ax.set_ylabel("relative frequency")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    matplotlib.rcParams["svg.hashsalt"] = "gesturegen"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_sweep_svg(path: str | os.PathLike, rows: list[dict], metric: str = "ape") -> None:
    """Error-bar line plot of a d_z sweep (mean +/- sd per dimensionality)."""
    path = Path(path)
    _ensure_writable(path)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = [int(r["d_z"]) for r in rows]
    y = [float(r[f"{metric}_mean"]) for r in rows]
    e = [float(r[f"{metric}_sd"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    line = ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label="proposed")
    line.lines[0].set_gid("condition-proposed")
    ax.set_xlabel("representation dimensionality $d_z$")
    ax.set_ylabel("average position error" if metric == "ape" else "average jerk")
    ax.legend()
    fig.tight_layout()
    matplotlib.rcParams["svg.hashsalt"] = "gesturegen"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
