"""Frame packing and masked windows.

A frame is ``[rot6d (J*6) | root position (3) | contacts (4) | mask (1)]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CharacterFrame, MotionClip, heading_from_rotation, matrix_from_rot6d, rot6d_from_matrix, yaw_matrix
from ..errors import ValidationError


def frame_dim(J: int) -> int:
    return J * 6 + 8


def joints_of(D: int) -> int:
    if (D - 8) % 6 or D <= 8:
        raise ValidationError(f"frame width {D} is not J*6+8")
    return (D - 8) // 6


def channels(J: int) -> dict[str, slice]:
    n = J * 6
    return {"rot": slice(0, n), "root": slice(n, n + 3), "contacts": slice(n + 3, n + 7), "mask": slice(n + 7, n + 8)}


def pack(rot6d, root_pos, contacts, mask=None) -> np.ndarray:
    rot6d = np.asarray(rot6d, dtype=float)
    L = rot6d.shape[0]
    m = np.zeros((L, 1)) if mask is None else np.asarray(mask, dtype=float).reshape(L, 1)
    return np.concatenate([rot6d.reshape(L, -1), np.asarray(root_pos, float), np.asarray(contacts, float), m], axis=1)


def unpack(frames) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    frames = np.asarray(frames)
    J = joints_of(frames.shape[-1])
    c = channels(J)
    lead = frames.shape[:-1]
    return (frames[..., c["rot"]].reshape(*lead, J, 6), frames[..., c["root"]],
            frames[..., c["contacts"]], frames[..., c["mask"]][..., 0])


def clip_to_frames(clip: MotionClip) -> np.ndarray:
    return pack(clip.rot6d, clip.root_pos, clip.contacts)


def frames_to_clip(frames, fps: float, skeleton=None, label: str = "", id: str = "") -> MotionClip:
    rot6d, root, contacts, _ = unpack(frames)
    # re-orthonormalize so exported rotations are exact
    rot6d = rot6d_from_matrix(matrix_from_rot6d(rot6d))
    return MotionClip(fps, rot6d, root.copy(), (contacts >= 0.5).astype(float), label, id, skeleton)


def frame_transform(frames, index: int) -> CharacterFrame:
    """Character frame of one packed frame."""
    rot6d, root, _, _ = unpack(frames[index:index + 1])
    R = matrix_from_rot6d(rot6d[0, 0])
    return CharacterFrame(np.array([root[0, 0], root[0, 2]]), float(heading_from_rotation(R)))


def transform_frames(frames, T: CharacterFrame) -> np.ndarray:
    """Rigid ground-plane transform of packed frames (..., L, D)."""
    out = np.array(frames, dtype=float, copy=True)
    J = joints_of(out.shape[-1])
    c = channels(J)
    root = out[..., c["root"]]
    xz = T.to_world(root[..., [0, 2]].reshape(-1, 2)).reshape(*root.shape[:-1], 2)
    out[..., c["root"].start] = xz[..., 0]
    out[..., c["root"].start + 2] = xz[..., 1]
    # the root rotation is the first joint's six channels
    r0 = out[..., 0:6]
    valid = np.linalg.norm(r0[..., :3], axis=-1) > 1e-8
    if np.any(valid):
        R = yaw_matrix(T.heading) @ matrix_from_rot6d(r0[valid])
        r0[valid] = rot6d_from_matrix(R)
        out[..., 0:6] = r0
    return out


@dataclass
class MaskedWindow:
    """A ``T x D`` window with one contiguous missing span between two keyframes."""
    frames: np.ndarray
    keyframes: tuple[int, int]

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=float)
        if f.ndim != 2:
            raise ValidationError("window frames must be T x D")
        J = joints_of(f.shape[1])
        k0, k1 = (int(k) for k in self.keyframes)
        if not 0 <= k0 < k1 < len(f):
            raise ValidationError(f"keyframes {self.keyframes} invalid for T={len(f)}")
        m = np.zeros(len(f), bool)
        m[k0 + 1:k1] = True
        c = channels(J)
        if not np.array_equal(f[:, c["mask"].start] == 1.0, m) or np.any(f[~m, c["mask"].start] != 0):
            raise ValidationError("mask channel must be 1 exactly on the missing frames")
        if np.any(f[m, :c["mask"].start] != 0):
            raise ValidationError("missing frames must be zero-filled")
        if not np.all(np.isfinite(f)):
            raise ValidationError("window contains non-finite values")
        self.frames = f
        self.keyframes = (k0, k1)

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def J(self) -> int:
        return joints_of(self.frames.shape[1])

    @property
    def missing(self) -> np.ndarray:
        m = np.zeros(self.T, bool)
        m[self.keyframes[0] + 1:self.keyframes[1]] = True
        return m

    @property
    def gap(self) -> int:
        return self.keyframes[1] - self.keyframes[0] - 1

    @classmethod
    def from_contexts(cls, prev, nxt, gap: int) -> "MaskedWindow":
        """``[prev | gap zero frames | nxt]`` from packed context frames."""
        prev, nxt = np.asarray(prev, float), np.asarray(nxt, float)
        if prev.shape[1] != nxt.shape[1]:
            raise ValidationError("context frame widths differ")
        if len(prev) == 0 or len(nxt) == 0:
            raise ValidationError("both contexts need at least one frame")
        hole = np.zeros((gap, prev.shape[1]))
        hole[:, -1] = 1.0
        p, n = prev.copy(), nxt.copy()
        p[:, -1] = n[:, -1] = 0.0
        return cls(np.concatenate([p, hole, n]), (len(prev) - 1, len(prev) + gap))

    @classmethod
    def from_frames(cls, frames, context_len: int) -> tuple["MaskedWindow", np.ndarray]:
        """Hide the centre of a ground-truth window; returns the window and its target."""
        frames = np.asarray(frames, float).copy()
        frames[:, -1] = 0.0
        gap = len(frames) - 2 * context_len
        if gap < 0:
            raise ValidationError("window shorter than its two contexts")
        w = cls.from_contexts(frames[:context_len], frames[len(frames) - context_len:], gap)
        target = frames.copy()
        target[:, -1] = w.frames[:, -1]
        return w, target
