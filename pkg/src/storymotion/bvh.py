"""BVH export (centimeters, ZYX Euler angles in degrees)."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .core import MotionClip, Skeleton, matrix_from_rot6d
from .errors import ValidationError
from .fileio import atomic_write_text

CM = 100.0


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def hierarchy_lines(skeleton: Skeleton) -> list[str]:
    children = {i: [] for i in range(skeleton.J)}
    for i, j in enumerate(skeleton.joints):
        if j.parent is not None:
            children[j.parent].append(i)
    lines = ["HIERARCHY"]

    def emit(i: int, depth: int):
        pad = "\t" * depth
        j = skeleton.joints[i]
        off = np.asarray(j.offset) * CM
        lines.append(f"{pad}{'ROOT' if j.parent is None else 'JOINT'} {j.name}")
        lines.append(f"{pad}{{")
        lines.append(f"{pad}\tOFFSET {' '.join(_fmt(v) for v in off)}")
        if j.parent is None:
            lines.append(f"{pad}\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation")
        else:
            lines.append(f"{pad}\tCHANNELS 3 Zrotation Yrotation Xrotation")
        for c in children[i]:
            emit(c, depth + 1)
        if not children[i]:
            lines.extend([f"{pad}\tEnd Site", f"{pad}\t{{", f"{pad}\t\tOFFSET 0.000000 0.000000 0.000000",
                          f"{pad}\t}}"])
        lines.append(f"{pad}}}")

    emit(0, 0)
    return lines


def motion_channels(motion: MotionClip, skeleton: Skeleton) -> np.ndarray:
    """(L, 3 + 3J) channel values in hierarchy (depth-first) order."""
    order = _dfs_order(skeleton)
    R = matrix_from_rot6d(motion.rot6d)  # (L, J, 3, 3)
    L, J = R.shape[:2]
    eul = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_euler("ZYX", degrees=True).reshape(L, J, 3)
    eul[np.abs(eul) < 1e-9] = 0.0
    return np.concatenate([motion.root_pos * CM, eul[:, order].reshape(L, -1)], axis=1)


def _dfs_order(skeleton: Skeleton) -> list[int]:
    children = {i: [] for i in range(skeleton.J)}
    for i, j in enumerate(skeleton.joints):
        if j.parent is not None:
            children[j.parent].append(i)
    out, stack = [], [0]
    while stack:
        i = stack.pop()
        out.append(i)
        stack.extend(reversed(children[i]))
    return out


def bvh_text(motion: MotionClip, skeleton: Skeleton) -> str:
    if motion.J != skeleton.J:
        raise ValidationError(f"motion has {motion.J} joints, skeleton has {skeleton.J}")
    names = [j.name for j in skeleton.joints]
    if len(set(names)) != len(names) or any(not n or any(ch.isspace() for ch in n) for n in names):
        raise ValidationError("BVH joint names must be unique and contain no whitespace")
    lines = hierarchy_lines(skeleton)
    lines += ["MOTION", f"Frames: {len(motion)}", f"Frame Time: {1.0 / motion.fps:.8f}"]
    for row in motion_channels(motion, skeleton):
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def export_bvh(motion: MotionClip, skeleton: Skeleton, path) -> None:
    atomic_write_text(path, bvh_text(motion, skeleton))
