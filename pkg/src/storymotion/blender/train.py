"""Training loop, window sampling and the interpolation baseline."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial.transform import Rotation, Slerp

from ..core import MotionClip, Skeleton, forward_kinematics, matrix_from_rot6d, rot6d_from_matrix
from ..errors import ValidationError
from .config import BlendConfig
from .losses import total_loss
from .model import BlendModel, run_progressive
from .window import clip_to_frames, frame_transform, transform_frames, unpack

log = logging.getLogger(__name__)


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    seconds: float = 0.0


class WindowSampler:
    """Random training windows cut from long clips, canonicalized so the last
    past-context frame sits at the origin facing +z."""

    def __init__(self, clips: list[MotionClip], cfg: BlendConfig):
        if not clips:
            raise ValidationError("empty blend dataset")
        need = 2 * cfg.context_len + cfg.max_gap
        short = [c.id for c in clips if len(c) < need]
        if short:
            raise ValidationError(f"clips shorter than {need} frames: {short[:5]}")
        self.frames = [clip_to_frames(c) for c in clips]
        self.cfg = cfg

    def window(self, clip: int, start: int, gap: int) -> np.ndarray:
        ctx = self.cfg.context_len
        w = self.frames[clip][start:start + 2 * ctx + gap]
        return canonicalize(w, ctx - 1)

    def batch(self, rng: np.random.Generator, gap: int, size: int) -> np.ndarray:
        L = 2 * self.cfg.context_len + gap
        out = []
        for _ in range(size):
            k = int(rng.integers(len(self.frames)))
            s = int(rng.integers(len(self.frames[k]) - L + 1))
            out.append(self.window(k, s, gap))
        return np.stack(out)


def canonicalize(frames, anchor: int) -> np.ndarray:
    return transform_frames(frames, frame_transform(frames, anchor).inverse())


def target_batch(frames: np.ndarray, context_len: int):
    """Input windows (missing frames zero-filled, mask set) and their targets."""
    x = frames.copy()
    L = x.shape[1]
    k0, k1 = context_len - 1, L - context_len
    x[:, :, -1] = 0.0
    x[:, k0 + 1:k1, -1] = 1.0
    target = x.copy()
    x[:, k0 + 1:k1, :-1] = 0.0
    return x, target, (k0, k1)


def train(model: BlendModel, clips: list[MotionClip], skeleton: Skeleton, cfg: BlendConfig | None = None,
          max_seconds: float | None = None) -> tuple[BlendModel, TrainHistory]:
    """Adam over random-gap windows; the loss sums every iteration's output."""
    cfg = cfg or model.cfg
    sampler = WindowSampler(clips, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    dtype = next(model.parameters()).dtype
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    # cosine decay to a tenth of the base rate over the planned steps
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.epochs * cfg.steps_per_epoch, eta_min=0.1 * cfg.lr)
    hist = TrainHistory()
    t0 = time.perf_counter()
    model.train()
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(cfg.steps_per_epoch):
            gap = int(rng.integers(cfg.min_gap, cfg.max_gap + 1))
            x, target, kf = target_batch(sampler.batch(rng, gap, cfg.batch_size), cfg.context_len)
            x = torch.as_tensor(x, dtype=dtype)
            target = torch.as_tensor(target, dtype=dtype)
            missing = torch.zeros(x.shape[1], dtype=torch.bool)
            missing[kf[0] + 1:kf[1]] = True
            loss = total_loss(skeleton, run_progressive(model, x, kf), target, missing, cfg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += float(loss.detach())
        hist.epoch_loss.append(total / cfg.steps_per_epoch)
        log.info("epoch %d loss %.5f", epoch, hist.epoch_loss[-1])
        if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
            log.info("stopping after %d epochs (time budget)", epoch + 1)
            break
    hist.seconds = time.perf_counter() - t0
    model.eval()
    return model, hist


# --- baseline & evaluation ---------------------------------------------------

def interpolate_window(frames: np.ndarray, keyframes: tuple[int, int]) -> np.ndarray:
    """Linear root positions and slerped joint rotations between the keyframes."""
    out = np.array(frames, dtype=float, copy=True)
    k0, k1 = keyframes
    if k1 - k0 < 2:
        return out
    rot6d, root, contacts, _ = unpack(out)
    J = rot6d.shape[1]
    t = np.arange(k0 + 1, k1)
    a = (t - k0) / (k1 - k0)
    R = matrix_from_rot6d(rot6d[[k0, k1]])  # (2, J, 3, 3)
    mats = np.empty((len(t), J, 3, 3))
    for j in range(J):
        mats[:, j] = Slerp([0.0, 1.0], Rotation.from_matrix(R[:, j]))(a).as_matrix()
    n = J * 6
    out[k0 + 1:k1, :n] = rot6d_from_matrix(mats).reshape(len(t), n)
    out[k0 + 1:k1, n:n + 3] = (1 - a)[:, None] * root[k0] + a[:, None] * root[k1]
    near = np.where(a[:, None] < 0.5, contacts[k0], contacts[k1])
    out[k0 + 1:k1, n + 3:n + 7] = near
    return out


@dataclass
class BlendEvaluation:
    gap: int
    windows: int
    l2p_iterations: list[float]  # one per iteration output
    l2p_interpolation: float

    @property
    def l2p_final(self) -> float:
        return self.l2p_iterations[-1]

    @property
    def l2p_first(self) -> float:
        return self.l2p_iterations[0]


def _l2p(skeleton, pred, target, missing):
    rp, xp, _, _ = unpack(pred[:, missing])
    rt, xt, _, _ = unpack(target[:, missing])
    gp = forward_kinematics(skeleton, rp, xp)
    gt = forward_kinematics(skeleton, rt, xt)
    return float(np.linalg.norm(gp - gt, axis=-1).mean())


def evaluate(model: BlendModel, clips: list[MotionClip], skeleton: Skeleton, gap: int = 30,
             n_windows: int = 64, seed: int = 1234) -> BlendEvaluation:
    """Missing-frame L2P of every iteration and of interpolation on held-out windows."""
    cfg = model.cfg
    sampler = WindowSampler(clips, cfg)
    rng = np.random.default_rng(seed)
    x, target, kf = target_batch(sampler.batch(rng, gap, n_windows), cfg.context_len)
    missing = np.zeros(x.shape[1], bool)
    missing[kf[0] + 1:kf[1]] = True
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        outs = [y.double().numpy() for y in run_progressive(model, torch.as_tensor(x, dtype=dtype), kf)]
    interp = np.stack([interpolate_window(w, kf) for w in x])
    return BlendEvaluation(gap, n_windows, [_l2p(skeleton, y, target, missing) for y in outs],
                           _l2p(skeleton, interp, target, missing))
