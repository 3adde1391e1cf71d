"""Motion quality metrics and reference evaluation trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .core import MotionClip, Skeleton, clip_positions, matrix_from_rot6d
from .errors import ValidationError


@dataclass(frozen=True)
class TimedPath:
    times: np.ndarray  # (n,)
    points: np.ndarray  # (n, 2) ground (x, z)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.points, dtype=float)
        if t.ndim != 1 or p.shape != (len(t), 2):
            raise ValidationError("timed path needs (n,) times and (n, 2) points")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("timed path times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.points[:, 0]),
                         np.interp(t, self.times, self.points[:, 1])], -1)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def to_records(self) -> list[dict]:
        return [{"t": float(t), "pos": [float(p[0]), float(p[1])]} for t, p in zip(self.times, self.points)]

    @classmethod
    def from_records(cls, records) -> "TimedPath":
        return cls(np.array([r["t"] for r in records]), np.array([r["pos"] for r in records]))


@dataclass(frozen=True)
class MetricReport:
    l2p: float | None = None
    l2q: float | None = None
    physics_error: float | None = None
    trajectory_error: float | None = None

    UNITS = {"l2p": "m", "l2q": "quat", "physics_error": "m", "trajectory_error": "m"}

    def to_text(self) -> str:
        lines = []
        for k in ("l2p", "l2q", "physics_error", "trajectory_error"):
            v = getattr(self, k)
            if v is not None:
                lines.append(f"{k}={v!r}")
                lines.append(f"{k}_unit={self.UNITS[k]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        vals = {}
        for line in text.splitlines():
            k, _, v = line.partition("=")
            if k in cls.UNITS:
                vals[k] = float(v)
        return cls(**vals)


def _check_same_length(a: MotionClip, b: MotionClip):
    if len(a) != len(b) or a.J != b.J:
        raise ValidationError(f"motions differ in shape: {len(a)}x{a.J} vs {len(b)}x{b.J}")


def l2p(gt: MotionClip, pred: MotionClip, skeleton: Skeleton) -> float:
    """Mean per-joint, per-frame distance between global joint positions (m)."""
    _check_same_length(gt, pred)
    g = clip_positions(gt, skeleton)
    p = clip_positions(pred, skeleton)
    return float(np.linalg.norm(g - p, axis=-1).mean())


def quaternions(rot6d) -> np.ndarray:
    """(..., 6) -> (..., 4) xyzw unit quaternions."""
    m = matrix_from_rot6d(rot6d)
    shape = m.shape[:-2]
    return Rotation.from_matrix(m.reshape(-1, 3, 3)).as_quat().reshape(*shape, 4)


def l2q(gt: MotionClip, pred: MotionClip) -> float:
    """Mean per-joint, per-frame L2 distance of hemisphere-aligned quaternions."""
    _check_same_length(gt, pred)
    qg = quaternions(gt.rot6d)
    qp = quaternions(pred.rot6d)
    flip = np.sum(qg * qp, axis=-1, keepdims=True) < 0
    qp = np.where(flip, -qp, qp)
    return float(np.linalg.norm(qg - qp, axis=-1).mean())


def physics_error(motion: MotionClip, skeleton: Skeleton, ground_eps: float = 0.02,
                  positions: np.ndarray | None = None) -> float:
    """Per-frame mean of foot penetration (all 4 foot joints) plus floating of the lowest one."""
    pos = clip_positions(motion, skeleton) if positions is None else positions
    y = pos[:, list(skeleton.foot_joint_indices), 1]
    penetration = np.maximum(0.0, -y).sum(axis=1)
    floating = np.maximum(0.0, y.min(axis=1) - ground_eps)
    return float((penetration + floating).mean())


def trajectory_error(path: TimedPath, motion: MotionClip, fps: float | None = None) -> float:
    """Mean ground distance between the hip and the desired position at each frame time."""
    fps = motion.fps if fps is None else fps
    t = np.arange(len(motion)) / fps
    if t[-1] > path.times[-1] + 1e-9 or t[0] < path.times[0] - 1e-9:
        raise ValidationError(f"path covers [{path.times[0]}, {path.times[-1]}] s, motion spans [0, {t[-1]}] s")
    desired = path.at(t)
    hip = motion.root_pos[:, [0, 2]]
    return float(np.linalg.norm(hip - desired, axis=1).mean())


def reference_trajectory(kind: str, duration_s: float = 20.0, speed: float = 1.0, fps: float = 30.0) -> TimedPath:
    """Evaluation paths sampled at ``fps``.

    wave: lateral x = 2 sin(t) while advancing along +y at ``speed``.
    square: side 5, counter-clockwise from the origin, constant speed.
    circle: diameter 5 centred at the origin, starting at (2.5, 0), constant speed.
    """
    n = int(np.floor(duration_s * fps + 1e-9)) + 1
    t = np.arange(n) / fps
    if kind == "wave":
        pts = np.stack([2.0 * np.sin(t), speed * t], -1)
    elif kind == "circle":
        r = 2.5
        a = speed * t / r
        pts = np.stack([r * np.cos(a), r * np.sin(a)], -1)
    elif kind == "square":
        side = 5.0
        corners = np.array([[0, 0], [side, 0], [side, side], [0, side], [0, 0]], dtype=float)
        s = np.mod(speed * t, 4 * side)
        k = np.minimum((s // side).astype(int), 3)
        frac = (s - k * side) / side
        pts = corners[k] + (corners[k + 1] - corners[k]) * frac[:, None]
    else:
        raise ValidationError(f"unknown reference trajectory {kind!r}")
    return TimedPath(t, pts)


def evaluate(motion: MotionClip, skeleton: Skeleton, gt: MotionClip | None = None,
             path: TimedPath | None = None, ground_eps: float = 0.02) -> MetricReport:
    return MetricReport(
        l2p=None if gt is None else l2p(gt, motion, skeleton),
        l2q=None if gt is None else l2q(gt, motion),
        physics_error=physics_error(motion, skeleton, ground_eps),
        trajectory_error=None if path is None else trajectory_error(path, motion),
    )
