"""Progressive mask transformer for motion in-betweening.

One network is applied ``r`` times to a window whose centre is missing. At
iteration ``i`` the ``M_i`` missing frames closest to the gap centre are
hidden from attention; ``M_i`` shrinks linearly to zero, so frames next to
the known context are resolved first.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..errors import ValidationError
from .config import BlendConfig
from .window import MaskedWindow, channels, frame_dim

OFFSET_SCALE = 30.0  # keyframe offsets are fed in seconds at 30 fps


# --- mask schedule -----------------------------------------------------------

def masked_count(i: int, r: int, M: int) -> int:
    """Frames still masked at iteration ``i``: round-half-up of M (r-1-i)/(r-1)."""
    if not 0 <= i < r:
        raise ValidationError(f"iteration {i} outside [0, {r})")
    if r == 1:
        return 0
    return int(math.floor(M * (r - 1 - i) / (r - 1) + 0.5))


def masked_frames(i: int, r: int, span: tuple[int, int]) -> np.ndarray:
    """Indices of the masked frames of ``span = (start, stop)``, nearest the centre first."""
    start, stop = span
    idx = np.arange(start, stop)
    n = masked_count(i, r, len(idx))
    centre = (start + stop - 1) / 2.0
    order = sorted(idx, key=lambda t: (abs(t - centre), t))
    return np.sort(np.array(order[:n], dtype=int))


def attention_mask(i: int, r: int, span: tuple[int, int], T: int, context_len: int = 1) -> np.ndarray:
    """``T x T`` boolean matrix, True where query row may attend to key column."""
    start, stop = span
    if not 0 <= start <= stop <= T:
        raise ValidationError(f"span {span} outside a window of {T} frames")
    if stop - start > T - 2 * context_len:
        raise ValidationError(f"span of {stop - start} frames leaves less than {context_len} context frames per side")
    hidden = np.zeros(T, bool)
    hidden[masked_frames(i, r, span)] = True
    allow = np.broadcast_to(~hidden, (T, T)).copy()
    np.fill_diagonal(allow, True)
    return allow


# --- network -------------------------------------------------------------------

class RelativeSelfAttention(nn.Module):
    """Multi-head attention with a relative-offset key term q_i . E[j - i]."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads, self.dh = heads, d_model // heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x, rel, allow):
        B, L, d = x.shape
        q, k, v = self.qkv(x).view(B, L, 3, self.heads, self.dh).permute(2, 0, 3, 1, 4)
        rel = rel.view(L, L, self.heads, self.dh)
        logits = torch.einsum("bhid,bhjd->bhij", q, k) + torch.einsum("bhid,ijhd->bhij", q, rel)
        logits = logits / math.sqrt(self.dh)
        logits = logits.masked_fill(~allow, float("-inf"))
        y = torch.softmax(logits, dim=-1) @ v
        return self.out(y.transpose(1, 2).reshape(B, L, d))


class Block(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = RelativeSelfAttention(d_model, heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, d_model))

    def forward(self, x, rel, allow):
        x = x + self.attn(self.ln1(x), rel, allow)
        return x + self.ffn(self.ln2(x))


class BlendNet(nn.Module):
    """Predicts the missing span as a residual over the linear interpolation
    of its two keyframes; blank frames (the span at the first pass) are
    zero-filled on input.
    """

    def __init__(self, J: int, cfg: BlendConfig, steps: int):
        super().__init__()
        self.J, self.T = J, cfg.T
        D = frame_dim(J)
        self.in_proj = nn.Linear(D, cfg.d_model)
        self.kf_pe = nn.Sequential(nn.Linear(2, cfg.kf_hidden), nn.GELU(), nn.Linear(cfg.kf_hidden, cfg.d_model))
        self.step_emb = nn.Embedding(steps, cfg.d_model)
        self.rel = nn.Parameter(torch.randn(2 * cfg.T - 1, cfg.d_model) * 0.02)
        self.blocks = nn.ModuleList([Block(cfg.d_model, cfg.heads, cfg.ffn_dim) for _ in range(cfg.layers)])
        self.ln = nn.LayerNorm(cfg.d_model)
        self.out_proj = nn.Linear(cfg.d_model, D - 1)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)
        c = channels(J)
        self.n_pose = c["contacts"].start
        self.n_feat = c["mask"].start

    def forward(self, x, keyframes, step: int, blank, allow, flag=None):
        """``x`` (B, L, D); ``blank``/``flag`` (L,) bool; ``allow`` (L, L) bool.

        Blank frames are zero-filled before projection; ``flag``
        (default ``blank``) is the per-frame masked indicator fed to the network.
        """
        B, L, D = x.shape
        if D != frame_dim(self.J):
            raise ValidationError(f"frame width {D} does not match J={self.J}")
        if L > self.T:
            raise ValidationError(f"window of {L} frames exceeds T={self.T}")
        k0, k1 = keyframes
        keep = (~blank).to(x.dtype)[None, :, None]
        flag = blank if flag is None else flag
        x_in = torch.cat([x[..., :self.n_feat] * keep, flag.to(x.dtype)[None, :, None].expand(B, L, 1)], -1)

        t = torch.arange(L, dtype=x.dtype)
        offsets = torch.stack([t - k0, t - k1], -1) / OFFSET_SCALE
        h = self.in_proj(x_in) + self.kf_pe(offsets)[None] + self.step_emb.weight[step][None, None]
        ij = torch.arange(L)[None, :] - torch.arange(L)[:, None] + self.T - 1
        rel = self.rel[ij]
        for blk in self.blocks:
            h = blk(h, rel, allow)
        delta = self.out_proj(self.ln(h))

        # every frame of the span is predicted as a residual over the keyframe
        # interpolation, so passes re-estimate rather than accumulate corrections
        a = ((t - k0) / (k1 - k0)).clamp(0, 1)[None, :, None]
        lerp = (1 - a) * x[:, k0:k0 + 1, :self.n_pose] + a * x[:, k1:k1 + 1, :self.n_pose]
        span = ((t > k0) & (t < k1))[None, :, None]
        pose = torch.where(span, lerp, x[..., :self.n_pose]) + delta[..., :self.n_pose]
        contacts = torch.sigmoid(delta[..., self.n_pose:self.n_feat])
        return torch.cat([pose, contacts, x[..., self.n_feat:]], -1)


class BlendModel(nn.Module):
    def __init__(self, J: int, cfg: BlendConfig | None = None):
        super().__init__()
        self.cfg = cfg or BlendConfig()
        self.J = J
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.cfg.seed)
            self.net = BlendNet(J, self.cfg, self.cfg.r)
            # the second stage refines the completed window once, attending everywhere
            self.refiner = BlendNet(J, self.cfg, 1) if self.cfg.two_stage else None

    @property
    def D(self) -> int:
        return frame_dim(self.J)


def _masks(model: BlendModel, i: int, r: int, keyframes, L: int):
    k0, k1 = keyframes
    missing = torch.zeros(L, dtype=torch.bool)
    missing[k0 + 1:k1] = True
    hidden = torch.zeros(L, dtype=torch.bool)
    if model.cfg.attention == "vanilla":
        allow = np.ones((L, L), bool)
    else:
        allow = attention_mask(i, r, (k0 + 1, k1), L, min(k0 + 1, L - k1))
        hidden[masked_frames(i, r, (k0 + 1, k1))] = True
    # only the first pass starts from zero-filled frames; later passes refine
    blank = missing if i == 0 else torch.zeros_like(missing)
    return hidden | blank, blank, torch.from_numpy(allow)


def net_forward(model: BlendModel, x, keyframes, iteration: int, r: int | None = None):
    """One pass of the shared network on a batch ``x`` (B, L, D)."""
    r = model.cfg.r if r is None else r
    if not 0 <= iteration < r <= model.cfg.r:
        raise ValidationError(f"iteration {iteration} invalid for r={r} (model trained with r={model.cfg.r})")
    flag, blank, allow = _masks(model, iteration, r, keyframes, x.shape[1])
    return model.net(x, keyframes, iteration, blank, allow, flag)


def run_progressive(model: BlendModel, x, keyframes, r: int | None = None) -> list:
    """All iteration outputs (refiner last, if any); context frames reset after each."""
    r = model.cfg.r if r is None else r
    L = x.shape[1]
    missing = torch.zeros(L, dtype=torch.bool)
    missing[keyframes[0] + 1:keyframes[1]] = True
    m = missing[None, :, None]
    outs, cur = [], x
    for i in range(r):
        cur = torch.where(m, net_forward(model, cur, keyframes, i, r), x)
        outs.append(cur)
    if model.refiner is not None:
        none = torch.zeros(L, dtype=torch.bool)
        allow = torch.ones(L, L, dtype=torch.bool)
        cur = torch.where(m, model.refiner(cur, keyframes, 0, none, allow), x)
        outs.append(cur)
    return outs


def _as_batch(model: BlendModel, window: MaskedWindow):
    if window.J != model.J:
        raise ValidationError(f"window has {window.J} joints, model {model.J}")
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(window.frames, dtype=dtype)[None]


def forward(model: BlendModel, window: MaskedWindow, iteration: int, r: int | None = None) -> np.ndarray:
    """Single network pass on a window; returns ``T x D``."""
    with torch.no_grad():
        y = net_forward(model, _as_batch(model, window), window.keyframes, iteration, r)
    return y[0].double().numpy()


def progressive_infer(model: BlendModel, window: MaskedWindow, r: int | None = None,
                      return_all: bool = False):
    """Completed ``T x D`` window; context frames equal the input exactly."""
    with torch.no_grad():
        outs = run_progressive(model, _as_batch(model, window), window.keyframes, r)
    ctx = ~window.missing
    res = []
    for y in outs:
        y = y[0].double().numpy()
        y[ctx] = window.frames[ctx]  # exact, independent of dtype round trips
        res.append(y)
    return res if return_all else res[-1]
