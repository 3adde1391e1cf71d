"""Procedural labeled motion clips: walks, turns, idle, wave, sit.

A desk-scale stand-in for a captured motion library. Every generator is
deterministic given its parameters and the seed.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import MotionClip, Skeleton, axis_angle_matrix, forward_kinematics, rot6d_from_matrix, yaw_matrix
from .skeletons import JOINT_INDEX as IX, smpl_like_skeleton

LEG_LENGTH = 0.86
X, Y, Z = np.eye(3)


def _rx(a):
    return axis_angle_matrix(X, a)


def _rz(a):
    return axis_angle_matrix(Z, a)


def cycle_frequency(speed: float) -> float:
    """Gait cycles per second for a walking speed (m/s)."""
    return 0.55 + 0.3 * speed


@dataclass(frozen=True)
class TurnSpec:
    speed: float
    radius: float
    direction: str  # "left" | "right"

    def angle(self, frames: int, fps: float) -> float:
        """Signed heading change over the clip (left turns are positive)."""
        a = self.speed * (frames - 1) / fps / self.radius
        return a if self.direction == "left" else -a


@dataclass
class SyntheticSpec:
    fps: float = 30.0
    frames: int = 40
    walk_speeds: tuple[float, ...] = (0.5, 0.7, 0.85, 1.0, 1.15, 1.3, 1.45, 1.6, 1.8, 2.0, 2.2, 2.4)
    turn_radii: tuple[float, ...] = (0.75, 1.25, 2.0, 2.5, 3.5, 6.0)
    turn_speeds: tuple[float, ...] = (0.8, 1.2, 1.7)
    idle: int = 2
    wave: int = 2
    sit: int = 2
    # long walks with drifting speed/turn rate, cut into overlapping clips
    meanders: int = 60
    meander_frames: int = 300
    meander_stride: int = 20
    meander_speed: tuple[float, float] = (0.6, 2.5)
    meander_turn: float = 2.4

    @property
    def turns(self) -> list[TurnSpec]:
        return [TurnSpec(s, r, d) for d in ("left", "right") for r in self.turn_radii for s in self.turn_speeds]


# --- pose synthesis --------------------------------------------------------

def _walk_pose(phase: float, speed: float, turn_rate: float) -> dict[int, np.ndarray]:
    f = cycle_frequency(speed)
    A = speed / (LEG_LENGTH * 2 * np.pi * f) if speed > 0 else 0.0
    K = 0.25 + 0.35 * min(speed, 2.5)
    rots = {}
    for side, off in (("left", 0.0), ("right", np.pi)):
        ph = phase + off
        theta = A * np.sin(ph)
        knee = 0.05 + K * max(0.0, np.cos(ph)) ** 1.5 if speed > 0 else 0.0
        rots[IX[f"{side}_hip"]] = _rx(-theta)
        rots[IX[f"{side}_knee"]] = _rx(knee)
        rots[IX[f"{side}_ankle"]] = _rx(0.7 * (theta - knee))
        arm = 0.8 * A * np.sin(ph + np.pi)
        rots[IX[f"{side}_shoulder"]] = _rx(-arm) @ _rz(0.08 if side == "left" else -0.08)
        rots[IX[f"{side}_elbow"]] = _rx(-0.25 - 0.2 * A)
    lean = 0.04 * speed
    bank = -0.15 * turn_rate * speed / 2.0
    rots[0] = _rx(lean) @ axis_angle_matrix(Z, bank)
    rots[IX["spine2"]] = axis_angle_matrix(Y, 0.12 * A * np.sin(phase))
    rots[IX["neck"]] = _rx(-lean)
    return rots


def _idle_pose(t: float, variant: float) -> dict[int, np.ndarray]:
    sway = 0.02 * np.sin(2 * np.pi * 0.3 * t + variant)
    return {
        IX["spine1"]: _rz(sway),
        IX["spine3"]: _rx(0.015 * np.sin(2 * np.pi * 0.25 * t + 2 * variant)),
        IX["left_shoulder"]: _rz(0.08 + sway),
        IX["right_shoulder"]: _rz(-0.08 + sway),
        IX["left_elbow"]: _rx(-0.15),
        IX["right_elbow"]: _rx(-0.15),
    }


def _wave_pose(t: float, variant: float) -> dict[int, np.ndarray]:
    rots = _idle_pose(t, variant)
    raise_ = min(1.0, t / 0.3)
    rots[IX["right_shoulder"]] = _rz(-2.3 * raise_)
    rots[IX["right_elbow"]] = _rz(-(0.5 + 0.45 * np.sin(2 * np.pi * 1.6 * t + variant)) * raise_)
    return rots


def _sit_pose(s: float) -> dict[int, np.ndarray]:
    flex = 1.45 * s
    return {
        IX["left_hip"]: _rx(-flex), IX["right_hip"]: _rx(-flex),
        IX["left_knee"]: _rx(flex), IX["right_knee"]: _rx(flex),
        IX["spine1"]: _rx(0.25 * s),
        IX["left_shoulder"]: _rz(0.08), IX["right_shoulder"]: _rz(-0.08),
        IX["left_elbow"]: _rx(-0.4 * s), IX["right_elbow"]: _rx(-0.4 * s),
    }


def _assemble(skeleton: Skeleton, headings, ground_xz, poses, fps, label, id) -> MotionClip:
    L, J = len(headings), skeleton.J
    R = np.tile(np.eye(3), (L, J, 1, 1))
    for i, pose in enumerate(poses):
        for j, m in pose.items():
            R[i, j] = m
    R[:, 0] = yaw_matrix(headings) @ R[:, 0]
    rot6d = rot6d_from_matrix(R)
    root = np.zeros((L, 3))
    root[:, 0], root[:, 2] = ground_xz[:, 0], ground_xz[:, 1]
    pos = forward_kinematics(skeleton, rot6d, root)
    feet = list(skeleton.foot_joint_indices)
    # lowest foot joint rests on the ground
    root[:, 1] = -pos[:, feet, 1].min(axis=1)
    pos[..., 1] += root[:, 1:2]
    contacts = foot_contacts(skeleton, pos, fps)
    return MotionClip(fps, rot6d, root, contacts, label, id, skeleton)


def foot_contacts(skeleton: Skeleton, positions: np.ndarray, fps: float,
                  height_tol: float = 0.03, speed_tol: float = 0.6) -> np.ndarray:
    """Contact flags from foot heights (relative to rest height) and speeds."""
    feet = list(skeleton.foot_joint_indices)
    rest = forward_kinematics(skeleton, rot6d_from_matrix(np.tile(np.eye(3), (skeleton.J, 1, 1))), np.zeros(3))
    rest_h = rest[feet, 1] - rest[feet, 1].min()
    fp = positions[:, feet]
    vel = np.gradient(fp, 1.0 / fps, axis=0)
    speed = np.linalg.norm(vel[..., [0, 2]], axis=-1)
    return ((fp[..., 1] - rest_h < height_tol) & (speed < speed_tol)).astype(float)


def integrate_ground_path(speeds, turn_rates, fps, heading0=0.0, start=(0.0, 0.0)):
    """Exact arcs for piecewise-constant (speed, turn rate) per frame interval.

    Returns headings (L,) and ground positions (L, 2) for L = len(speeds) + 1.
    """
    dt = 1.0 / fps
    n = len(speeds)
    h = np.empty(n + 1)
    p = np.empty((n + 1, 2))
    h[0], p[0] = heading0, start
    for k in range(n):
        v, w = speeds[k], turn_rates[k]
        h1 = h[k] + w * dt
        if abs(w) < 1e-12:
            step = v * dt * np.array([np.sin(h[k]), np.cos(h[k])])
        else:
            step = (v / w) * np.array([np.cos(h[k]) - np.cos(h1), np.sin(h1) - np.sin(h[k])])
        h[k + 1], p[k + 1] = h1, p[k] + step
    return h, p


def walk_clip(skeleton, speeds, turn_rates, fps, phase0, label, id) -> MotionClip:
    speeds = np.asarray(speeds, dtype=float)
    turn_rates = np.asarray(turn_rates, dtype=float)
    headings, ground = integrate_ground_path(speeds, turn_rates, fps)
    v = np.concatenate([speeds[:1], speeds])
    w = np.concatenate([turn_rates[:1], turn_rates])
    phases = phase0 + 2 * np.pi * np.concatenate([[0.0], np.cumsum(cycle_frequency(speeds) / fps)])
    poses = [_walk_pose(phases[i], v[i], w[i]) for i in range(len(v))]
    return _assemble(skeleton, headings, ground, poses, fps, label, id)


def stationary_clip(skeleton, kind: str, frames: int, fps: float, variant: float, id: str) -> MotionClip:
    t = np.arange(frames) / fps
    ground = np.zeros((frames, 2))
    if kind == "idle":
        poses, label = [_idle_pose(ti, variant) for ti in t], "idle"
    elif kind == "wave":
        poses, label = [_wave_pose(ti, variant) for ti in t], "wave"
    elif kind == "sit":
        s = np.clip(t / (t[-1] * (0.8 + 0.1 * np.sin(variant))), 0, 1)
        s = s * s * (3 - 2 * s)
        poses, label = [_sit_pose(si) for si in s], "sit"
        # pelvis moves back as the thighs flex so the feet stay planted
        thigh = 0.40
        ground[:, 1] = -thigh * np.sin(1.45 * s)
    else:
        raise ValueError(f"unknown stationary kind {kind!r}")
    return _assemble(skeleton, np.zeros(frames), ground, poses, fps, label, id)


def generate_synthetic_database(spec: SyntheticSpec | None = None, seed: int = 0,
                                skeleton: Skeleton | None = None) -> list[MotionClip]:
    """Labeled clips: "walking", "walking turn left/right", "idle", "wave", "sit"."""
    spec = spec or SyntheticSpec()
    skeleton = skeleton or smpl_like_skeleton()
    rng = np.random.default_rng(seed)
    n = spec.frames - 1
    clips = []
    for k, v in enumerate(spec.walk_speeds):
        clips.append(walk_clip(skeleton, np.full(n, v), np.zeros(n), spec.fps,
                               rng.uniform(0, 2 * np.pi), "walking", f"walk_{k:03d}"))
    for k, ts in enumerate(spec.turns):
        omega = ts.angle(spec.frames, spec.fps) / (n / spec.fps)
        clips.append(walk_clip(skeleton, np.full(n, ts.speed), np.full(n, omega), spec.fps,
                               rng.uniform(0, 2 * np.pi), f"walking turn {ts.direction}", f"turn_{k:03d}"))
    for k in range(spec.meanders):
        walk = meander(skeleton, spec.meander_frames, spec.fps, rng, spec.meander_speed, spec.meander_turn,
                       id=f"meander_{k:03d}")
        for a in range(0, spec.meander_frames - spec.frames + 1, spec.meander_stride):
            clips.append(walk.slice(a, a + spec.frames, id=f"meander_{k:03d}_{a:03d}"))
    for kind in ("idle", "wave", "sit"):
        for k in range(getattr(spec, kind)):
            clips.append(stationary_clip(skeleton, kind, spec.frames, spec.fps,
                                         rng.uniform(0, 2 * np.pi), f"{kind}_{k:03d}"))
    return clips


def meander(skeleton: Skeleton, frames: int, fps: float, rng: np.random.Generator,
            speed_range=(0.6, 2.5), max_turn: float = 2.4, knots: int = 8, id: str = "meander") -> MotionClip:
    n = frames - 1
    xs = np.linspace(0, n - 1, knots)
    speed = np.interp(np.arange(n), xs, rng.uniform(*speed_range, knots))
    turn = np.interp(np.arange(n), xs, rng.uniform(-max_turn, max_turn, knots))
    return walk_clip(skeleton, speed, turn, fps, rng.uniform(0, 2 * np.pi), "walking", id)


def random_locomotion(skeleton: Skeleton, frames: int, fps: float, rng: np.random.Generator,
                      id: str = "seq") -> MotionClip:
    """A long walk with smoothly varying speed and turn rate (blender training data)."""
    n = frames - 1
    knots = max(2, n // 45 + 2)
    xs = np.linspace(0, n - 1, knots)
    speed = np.interp(np.arange(n), xs, rng.uniform(0.5, 2.2, knots))
    turn = np.interp(np.arange(n), xs, rng.uniform(-1.2, 1.2, knots) * (rng.random(knots) < 0.7))
    return walk_clip(skeleton, speed, turn, fps, rng.uniform(0, 2 * np.pi), "walking", id)


def blend_training_set(n_sequences: int, frames: int, seed: int, fps: float = 30.0,
                       skeleton: Skeleton | None = None) -> list[MotionClip]:
    skeleton = skeleton or smpl_like_skeleton()
    rng = np.random.default_rng(seed)
    return [random_locomotion(skeleton, frames, fps, rng, f"seq_{k:04d}") for k in range(n_sequences)]


def database_hash(clips) -> str:
    h = hashlib.sha256()
    for c in clips:
        h.update(c.id.encode())
        h.update(c.label.encode())
        for a in (c.rot6d, c.root_pos, c.contacts):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()
