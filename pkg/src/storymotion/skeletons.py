"""Built-in skeleton fixtures."""
from __future__ import annotations

from .core import Joint, Skeleton

# name, parent, offset (m); SMPL-like 22-joint topology with arms hanging down
_SMPL_LIKE = [
    ("pelvis", None, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.09, -0.07, 0.0)),
    ("right_hip", 0, (-0.09, -0.07, 0.0)),
    ("spine1", 0, (0.0, 0.11, 0.0)),
    ("left_knee", 1, (0.0, -0.40, 0.0)),
    ("right_knee", 2, (0.0, -0.40, 0.0)),
    ("spine2", 3, (0.0, 0.13, 0.0)),
    ("left_ankle", 4, (0.0, -0.40, 0.0)),
    ("right_ankle", 5, (0.0, -0.40, 0.0)),
    ("spine3", 6, (0.0, 0.05, 0.0)),
    ("left_foot", 7, (0.0, -0.06, 0.13)),
    ("right_foot", 8, (0.0, -0.06, 0.13)),
    ("neck", 9, (0.0, 0.21, 0.0)),
    ("left_collar", 9, (0.08, 0.12, 0.0)),
    ("right_collar", 9, (-0.08, 0.12, 0.0)),
    ("head", 12, (0.0, 0.09, 0.04)),
    ("left_shoulder", 13, (0.10, 0.02, 0.0)),
    ("right_shoulder", 14, (-0.10, 0.02, 0.0)),
    ("left_elbow", 16, (0.0, -0.27, 0.0)),
    ("right_elbow", 17, (0.0, -0.27, 0.0)),
    ("left_wrist", 18, (0.0, -0.25, 0.0)),
    ("right_wrist", 19, (0.0, -0.25, 0.0)),
]

JOINT_INDEX = {name: i for i, (name, _, _) in enumerate(_SMPL_LIKE)}


def smpl_like_skeleton() -> Skeleton:
    """22 joints; feet are (left_foot, left_ankle, right_foot, right_ankle)."""
    joints = tuple(Joint(n, p, o) for n, p, o in _SMPL_LIKE)
    ix = JOINT_INDEX
    feet = (ix["left_foot"], ix["left_ankle"], ix["right_foot"], ix["right_ankle"])
    upper = tuple(ix[n] for n in (
        "spine1", "spine2", "spine3", "neck", "head",
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
        "left_wrist", "right_wrist",
    ))
    return Skeleton(joints, feet, upper)


def chain_skeleton(n: int, offset=(0.0, 1.0, 0.0)) -> Skeleton:
    """Serial chain of ``n >= 4`` joints; used by small tests."""
    joints = tuple(Joint(f"j{i}", None if i == 0 else i - 1, (0.0, 0.0, 0.0) if i == 0 else tuple(offset))
                   for i in range(n))
    return Skeleton(joints, tuple(range(n - 4, n)), ())
