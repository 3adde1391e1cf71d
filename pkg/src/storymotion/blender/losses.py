"""Training losses over the missing frames of a window."""
from __future__ import annotations

import torch
import torch.nn.functional as F

from ..core import Skeleton
from ..errors import ValidationError
from .window import channels, joints_of

SMOOTH_L1_BETA = 1.0


def _check(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _masked_mean(x, missing):
    """Mean of ``x`` (B, L, ...) over missing frames and all trailing elements."""
    m = missing.to(x.dtype).reshape(missing.shape + (1,) * (x.dim() - 2))
    per_frame = x[0, 0].numel()
    return (x * m).sum() / (missing.sum() * per_frame).clamp_min(1)


def _missing_like(missing, B, L):
    missing = torch.as_tensor(missing, dtype=torch.bool)
    return missing.expand(B, L) if missing.dim() == 1 else missing


def matrix_from_rot6d(v):
    a, b = v[..., :3], v[..., 3:6]
    c1 = F.normalize(a, dim=-1, eps=1e-8)
    c2 = F.normalize(b - (c1 * b).sum(-1, keepdim=True) * c1, dim=-1, eps=1e-8)
    c3 = torch.cross(c1, c2, dim=-1)
    return torch.stack([c1, c2, c3], dim=-1)


def forward_kinematics(skeleton: Skeleton, rot6d, root_pos):
    """Global joint positions (..., J, 3) from (..., J, 6) rotations."""
    local = matrix_from_rot6d(rot6d)
    offsets = torch.as_tensor(skeleton.offsets, dtype=rot6d.dtype)
    grot, gpos = [], []
    for j, joint in enumerate(skeleton.joints):
        if joint.parent is None:
            grot.append(local[..., j, :, :])
            gpos.append(root_pos)
        else:
            p = joint.parent
            grot.append(grot[p] @ local[..., j, :, :])
            gpos.append((grot[p] @ offsets[j]) + gpos[p])
    return torch.stack(gpos, dim=-2)


def window_positions(skeleton: Skeleton, frames):
    """Global joint positions of packed frames (B, L, D)."""
    J = joints_of(frames.shape[-1])
    c = channels(J)
    rot = frames[..., c["rot"]].reshape(*frames.shape[:-1], J, 6)
    return forward_kinematics(skeleton, rot, frames[..., c["root"]])


def velocities(positions, fps: float):
    """Backward differences along frames (first frame copies the second)."""
    v = (positions[:, 1:] - positions[:, :-1]) * fps
    return torch.cat([v[:, :1], v], dim=1)


def state_loss(pred, target, missing, lambda_c=0.1, lambda_r=1.0, lambda_p=1.0):
    """Contact L1 + rotation and root smooth-L1, averaged over missing frames."""
    _check(pred, target)
    if pred.dim() == 2:
        pred, target = pred[None], target[None]
    B, L, D = pred.shape
    missing = _missing_like(missing, B, L)
    c = channels(joints_of(D))
    contact = _masked_mean((pred[..., c["contacts"]] - target[..., c["contacts"]]).abs(), missing)
    rot = _masked_mean(F.smooth_l1_loss(pred[..., c["rot"]], target[..., c["rot"]], reduction="none",
                                        beta=SMOOTH_L1_BETA), missing)
    root = _masked_mean(F.smooth_l1_loss(pred[..., c["root"]], target[..., c["root"]], reduction="none",
                                         beta=SMOOTH_L1_BETA), missing)
    return lambda_c * contact + lambda_r * rot + lambda_p * root


def pos_loss(pred_global, target_global, missing, lambda_s=0.1, fps: float = 1.0):
    """Smooth-L1 on global joint positions plus mean |velocity| of the prediction."""
    _check(pred_global, target_global)
    if pred_global.dim() == 3:
        pred_global, target_global = pred_global[None], target_global[None]
    B, L = pred_global.shape[:2]
    missing = _missing_like(missing, B, L)
    dist = _masked_mean(F.smooth_l1_loss(pred_global, target_global, reduction="none", beta=SMOOTH_L1_BETA),
                        missing)
    if lambda_s == 0:
        return dist
    return dist + lambda_s * _masked_mean(velocities(pred_global, fps).abs(), missing)


def foot_loss(pred_contacts, foot_velocities, missing=None):
    """Mean over missing frames and foot slots of contact probability times foot speed."""
    if pred_contacts.dim() == 2:
        pred_contacts, foot_velocities = pred_contacts[None], foot_velocities[None]
    if foot_velocities.shape[:-1] != pred_contacts.shape:
        raise ValidationError("contacts and foot velocities disagree in shape")
    B, L = pred_contacts.shape[:2]
    missing = torch.ones(B, L, dtype=torch.bool) if missing is None else _missing_like(missing, B, L)
    speed = torch.linalg.vector_norm(foot_velocities, dim=-1)
    return _masked_mean((pred_contacts * speed).abs(), missing)


def total_loss(skeleton: Skeleton, outputs, target, missing, cfg):
    """Sum of the three losses over every iteration's output.

    Velocities here are per-frame displacements, which keeps the smoothness
    and foot terms on the scale of the position errors.
    """
    c = channels(joints_of(target.shape[-1]))
    feet = list(skeleton.foot_joint_indices)
    g = window_positions(skeleton, target)
    loss = 0.0
    for y in outputs:
        gh = window_positions(skeleton, y)
        fv = velocities(gh[..., feet, :], 1.0)
        loss = loss + state_loss(y, target, missing, cfg.lambda_c, cfg.lambda_r, cfg.lambda_p)
        loss = loss + pos_loss(gh, g, missing, cfg.lambda_s, 1.0)
        loss = loss + foot_loss(y[..., c["contacts"]], fv, missing)
    return loss
