"""Skeletons, frames, 6D rotations, forward kinematics and character frames.

Conventions: y-up, meters, ground plane y=0. Ground (2D) coordinates are the
world (x, z) pair. A character faces along its root's local +z axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateRotationError, StoryMotionError, ValidationError


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple[float, float, float]


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[Joint, ...]
    foot_joint_indices: tuple[int, int, int, int]  # L-toe, L-heel, R-toe, R-heel
    upper_body_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.joints or self.joints[0].parent is not None:
            raise ValidationError("skeleton root must be the first joint")
        for i, j in enumerate(self.joints[1:], start=1):
            if j.parent is None:
                raise ValidationError(f"joint {j.name!r} is a second root")
            if not 0 <= j.parent < i:
                raise ValidationError(f"joint {j.name!r} parent {j.parent} not topologically sorted")
        n = len(self.joints)
        if len(self.foot_joint_indices) != 4:
            raise ValidationError("need exactly 4 foot joint indices")
        for k in (*self.foot_joint_indices, *self.upper_body_indices):
            if not 0 <= k < n:
                raise ValidationError(f"joint index {k} out of range")
        if set(self.foot_joint_indices) & set(self.upper_body_indices):
            raise ValidationError("foot and upper-body joint sets overlap")

    @property
    def J(self) -> int:
        return len(self.joints)

    @property
    def parents(self) -> np.ndarray:
        return np.array([-1 if j.parent is None else j.parent for j in self.joints])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=float)

    def to_dict(self) -> dict:
        return {
            "joints": [{"name": j.name, "parent": j.parent, "offset": list(j.offset)} for j in self.joints],
            "foot_indices": list(self.foot_joint_indices),
            "upper_body_indices": list(self.upper_body_indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        joints = tuple(
            Joint(j["name"], j["parent"], tuple(float(x) for x in j["offset"])) for j in d["joints"]
        )
        return cls(joints, tuple(d["foot_indices"]), tuple(d["upper_body_indices"]))


@dataclass(frozen=True)
class Frame:
    rot6d: np.ndarray  # (J, 6)
    root_pos: np.ndarray  # (3,)
    contacts: np.ndarray  # (4,)
    masked: int = 0


@dataclass
class MotionClip:
    """A fixed-fps motion stored as stacked arrays.

    ``rot6d`` is (L, J, 6), ``root_pos`` is (L, 3) and ``contacts`` is (L, 4).
    """

    fps: float
    rot6d: np.ndarray
    root_pos: np.ndarray
    contacts: np.ndarray
    label: str = ""
    id: str = ""
    skeleton: Skeleton | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.rot6d = np.asarray(self.rot6d, dtype=float)
        self.root_pos = np.asarray(self.root_pos, dtype=float)
        self.contacts = np.asarray(self.contacts, dtype=float)
        L = self.rot6d.shape[0]
        if self.fps <= 0:
            raise ValidationError("fps must be positive")
        if L < 2:
            raise ValidationError(f"clip {self.id!r} needs at least 2 frames, got {L}")
        if self.rot6d.ndim != 3 or self.rot6d.shape[2] != 6:
            raise ValidationError("rot6d must be (L, J, 6)")
        if self.root_pos.shape != (L, 3) or self.contacts.shape != (L, 4):
            raise ValidationError("root_pos/contacts frame counts disagree with rot6d")
        if self.skeleton is not None and self.skeleton.J != self.J:
            raise ValidationError(f"clip has {self.J} joints, skeleton has {self.skeleton.J}")

    def __len__(self) -> int:
        return self.rot6d.shape[0]

    @property
    def J(self) -> int:
        return self.rot6d.shape[1]

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.fps

    def frame(self, i: int) -> Frame:
        return Frame(self.rot6d[i], self.root_pos[i], self.contacts[i])

    @property
    def frames(self) -> list[Frame]:
        return [self.frame(i) for i in range(len(self))]

    def slice(self, start: int, stop: int, id: str | None = None) -> "MotionClip":
        return MotionClip(
            self.fps, self.rot6d[start:stop].copy(), self.root_pos[start:stop].copy(),
            self.contacts[start:stop].copy(), self.label, id or self.id, self.skeleton,
        )

    def with_arrays(self, rot6d=None, root_pos=None, contacts=None, **kw) -> "MotionClip":
        return MotionClip(
            kw.get("fps", self.fps),
            self.rot6d if rot6d is None else rot6d,
            self.root_pos if root_pos is None else root_pos,
            self.contacts if contacts is None else contacts,
            kw.get("label", self.label), kw.get("id", self.id), self.skeleton,
        )

    @classmethod
    def concatenate(cls, clips: Sequence["MotionClip"], label: str = "", id: str = "") -> "MotionClip":
        return cls(
            clips[0].fps,
            np.concatenate([c.rot6d for c in clips]),
            np.concatenate([c.root_pos for c in clips]),
            np.concatenate([c.contacts for c in clips]),
            label, id, clips[0].skeleton,
        )


# --- rotations -------------------------------------------------------------

def _check_finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise StoryMotionError(f"non-finite values in {what}")


def rot6d_from_matrix(R) -> np.ndarray:
    """First two columns of ``R`` concatenated; works on (..., 3, 3)."""
    R = np.asarray(R, dtype=float)
    _check_finite(R, "rotation matrix")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def matrix_from_rot6d(v, context: str = "") -> np.ndarray:
    """Gram-Schmidt reconstruction of rotation matrices from (..., 6) vectors."""
    v = np.asarray(v, dtype=float)
    _check_finite(v, "rot6d")
    a, b = v[..., :3], v[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= 1e-8):
        raise DegenerateRotationError(_where("zero first column", na[..., 0] <= 1e-8, context))
    c1 = a / na
    b_perp = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    if np.any(nb <= 1e-8):
        raise DegenerateRotationError(_where("parallel columns", nb[..., 0] <= 1e-8, context))
    c2 = b_perp / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def _where(problem: str, bad: np.ndarray, context: str) -> str:
    idx = tuple(int(i) for i in np.argwhere(bad)[0]) if bad.ndim else ()
    names = ("frame", "joint") if len(idx) == 2 else ("joint",) if len(idx) == 1 else ()
    loc = ", ".join(f"{n} {i}" for n, i in zip(names, idx)) or "input"
    return f"degenerate rot6d ({problem}) at {loc}" + (f" in {context}" if context else "")


def axis_angle_matrix(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def yaw_matrix(theta):
    """Rotation about +y by ``theta`` (broadcasts over arrays of angles)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([
        np.stack([c, z, s], -1),
        np.stack([z, o, z], -1),
        np.stack([-s, z, c], -1),
    ], -2)


# --- kinematics ------------------------------------------------------------

def forward_kinematics(skeleton: Skeleton, rot6d, root_pos, return_rotations: bool = False):
    """Global joint positions for one frame (J,6) or a batch (..., J, 6)."""
    rot6d = np.asarray(rot6d, dtype=float)
    root_pos = np.asarray(root_pos, dtype=float)
    if rot6d.shape[-2] != skeleton.J:
        raise ValidationError(f"frame has {rot6d.shape[-2]} joints, skeleton has {skeleton.J}")
    local = matrix_from_rot6d(rot6d)
    offsets = skeleton.offsets
    grot = [None] * skeleton.J
    gpos = [None] * skeleton.J
    for j, joint in enumerate(skeleton.joints):
        if joint.parent is None:
            grot[j] = local[..., j, :, :]
            gpos[j] = root_pos
        else:
            p = joint.parent
            grot[j] = grot[p] @ local[..., j, :, :]
            gpos[j] = np.einsum("...ij,j->...i", grot[p], offsets[j]) + gpos[p]
    pos = np.stack(gpos, axis=-2)
    if return_rotations:
        return pos, np.stack(grot, axis=-3)
    return pos


def clip_positions(clip: MotionClip, skeleton: Skeleton | None = None) -> np.ndarray:
    return forward_kinematics(skeleton or clip.skeleton, clip.rot6d, clip.root_pos)


def joint_velocities(clip_or_fps, positions) -> np.ndarray:
    """Central differences scaled by fps; one-sided at the ends."""
    fps = clip_or_fps.fps if isinstance(clip_or_fps, MotionClip) else float(clip_or_fps)
    positions = np.asarray(positions, dtype=float)
    if positions.shape[0] < 2:
        raise ValidationError("velocities need at least 2 frames")
    return np.gradient(positions, 1.0 / fps, axis=0, edge_order=1)


@dataclass(frozen=True)
class CharacterFrame:
    """Ground-plane rigid transform: position (x, z) and heading angle.

    Facing is ``(sin heading, cos heading)`` in ground coordinates.
    """

    position: np.ndarray
    heading: float

    @property
    def facing(self) -> np.ndarray:
        return np.array([np.sin(self.heading), np.cos(self.heading)])

    def _rot(self) -> np.ndarray:
        # maps local ground vectors to world ground vectors
        c, s = np.cos(self.heading), np.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    def to_local(self, p2) -> np.ndarray:
        return (np.asarray(p2, dtype=float) - self.position) @ self._rot()

    def to_world(self, l2) -> np.ndarray:
        return np.asarray(l2, dtype=float) @ self._rot().T + self.position

    def dir_to_local(self, d2) -> np.ndarray:
        return np.asarray(d2, dtype=float) @ self._rot()

    def dir_to_world(self, d2) -> np.ndarray:
        return np.asarray(d2, dtype=float) @ self._rot().T

    def points_to_local(self, p3) -> np.ndarray:
        """3D points into the character-local frame (height kept)."""
        p3 = np.asarray(p3, dtype=float)
        out = p3.copy()
        out[..., [0, 2]] = self.to_local(p3[..., [0, 2]])
        return out

    def vectors_to_local(self, v3) -> np.ndarray:
        v3 = np.asarray(v3, dtype=float)
        out = v3.copy()
        out[..., [0, 2]] = self.dir_to_local(v3[..., [0, 2]])
        return out

    def inverse(self) -> "CharacterFrame":
        inv_pos = -self.position @ self._rot()
        return CharacterFrame(inv_pos, -self.heading)

    def compose(self, other: "CharacterFrame") -> "CharacterFrame":
        """self ∘ other: apply ``other`` then ``self``."""
        return CharacterFrame(self.to_world(other.position), self.heading + other.heading)


def heading_from_rotation(R) -> np.ndarray:
    """Heading angle(s) of the local +z axis projected on the ground."""
    R = np.asarray(R, dtype=float)
    fwd = R[..., :, 2]
    gx, gz = fwd[..., 0], fwd[..., 2]
    if np.any(np.hypot(gx, gz) < 1e-6):
        raise ValidationError("degenerate facing: forward axis is vertical")
    return np.arctan2(gx, gz)


def character_frame(frame: Frame) -> CharacterFrame:
    R = matrix_from_rot6d(frame.rot6d[0])
    p = np.asarray(frame.root_pos, dtype=float)
    return CharacterFrame(np.array([p[0], p[2]]), float(heading_from_rotation(R)))


def clip_character_frames(clip: MotionClip) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame ground positions (L, 2) and headings (L,)."""
    R = matrix_from_rot6d(clip.rot6d[:, 0])
    return clip.root_pos[:, [0, 2]].copy(), heading_from_rotation(R)


def align_transform(clip: MotionClip, frame: int, target: CharacterFrame) -> CharacterFrame:
    return target.compose(character_frame(clip.frame(frame)).inverse())


def transform_clip(clip: MotionClip, T: CharacterFrame) -> MotionClip:
    """Rigid ground-plane transform of a clip; root heights are kept."""
    root = clip.root_pos.copy()
    root[:, [0, 2]] = T.to_world(clip.root_pos[:, [0, 2]])
    rot6d = clip.rot6d.copy()
    R = yaw_matrix(T.heading) @ matrix_from_rot6d(rot6d[:, 0])
    rot6d[:, 0] = rot6d_from_matrix(R)
    return clip.with_arrays(rot6d=rot6d, root_pos=root)
