"""Transitions between placed clips."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import MotionClip, matrix_from_rot6d, rot6d_from_matrix
from ..errors import ValidationError
from .model import BlendModel, progressive_infer
from .window import MaskedWindow, clip_to_frames, frame_transform, pack, transform_frames, unpack


@dataclass
class Transition:
    frames: np.ndarray  # (gap, D) packed frames; contacts are probabilities

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def rot6d(self) -> np.ndarray:
        return unpack(self.frames)[0]

    @property
    def root_pos(self) -> np.ndarray:
        return unpack(self.frames)[1]

    @property
    def contacts(self) -> np.ndarray:
        return (unpack(self.frames)[2] >= 0.5).astype(float)


def _packed(ctx, D: int) -> np.ndarray:
    if isinstance(ctx, MotionClip):
        return clip_to_frames(ctx)
    a = np.asarray(ctx, dtype=float)
    if a.ndim != 2 or a.shape[1] not in (D, D - 1):
        raise ValidationError(f"context must be frames x {D}, got {a.shape}")
    return a if a.shape[1] == D else np.concatenate([a, np.zeros((len(a), 1))], 1)


def blend_clips(model: BlendModel, prev_tail, next_head, gap: int, r: int | None = None) -> Transition:
    """Generate ``gap`` frames joining ``prev_tail`` to ``next_head`` (both in one world frame)."""
    cfg, D = model.cfg, model.D
    prev, nxt = _packed(prev_tail, D), _packed(next_head, D)
    if len(prev) != cfg.context_len or len(nxt) != cfg.context_len:
        raise ValidationError(f"contexts need {cfg.context_len} frames, got {len(prev)} and {len(nxt)}")
    if gap == 0:
        return Transition(np.zeros((0, D)))
    if not cfg.min_gap <= gap <= cfg.max_gap:
        raise ValidationError(f"gap {gap} outside the trained range [{cfg.min_gap}, {cfg.max_gap}]")
    anchor = frame_transform(prev, len(prev) - 1)
    to_local = anchor.inverse()
    w = MaskedWindow.from_contexts(transform_frames(prev, to_local), transform_frames(nxt, to_local), gap)
    out = transform_frames(progressive_infer(model, w, r), anchor)
    rows = out[len(prev):len(prev) + gap]
    rot6d, root, contacts, _ = unpack(rows)
    rot6d = rot6d_from_matrix(matrix_from_rot6d(rot6d))
    return Transition(pack(rot6d, root, contacts))


def junction_frames(placement_lengths) -> list[int]:
    """Index in the stitched motion where each placement after the first begins."""
    return [int(x) for x in np.cumsum([n - 1 for n in placement_lengths])[:-1]]


def blend_junctions(motion: MotionClip, junctions, model: BlendModel, gap: int, r: int | None = None) -> MotionClip:
    """Replace ``gap`` frames centred on each junction with a generated transition.

    The total number of frames is unchanged. Junctions whose contexts would
    leave the motion, or overlap an earlier transition, raise.
    """
    if gap == 0 or not junctions:
        return motion
    ctx = model.cfg.context_len
    frames = clip_to_frames(motion)
    done = -1
    for j in junctions:
        a = j - gap // 2
        b = a + gap
        if a - ctx < 0 or b + ctx > len(frames):
            raise ValidationError(f"junction at frame {j} lacks {ctx} context frames on each side")
        if a - ctx < done:  # contexts must be original frames
            raise ValidationError(f"junction at frame {j} overlaps the previous transition's context")
        tr = blend_clips(model, frames[a - ctx:a], frames[b:b + ctx], gap, r)
        frames[a:b, :-1] = tr.frames[:, :-1]
        done = b
    rot6d, root, contacts, _ = unpack(frames)
    return motion.with_arrays(rot6d=rot6d.copy(), root_pos=root.copy(), contacts=(contacts >= 0.5).astype(float))
