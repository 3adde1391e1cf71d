"""Central finite-difference check of the training-loss gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..core import Skeleton
from ..skeletons import chain_skeleton
from .config import BlendConfig
from .losses import total_loss
from .model import BlendModel, run_progressive
from .window import channels, frame_dim


# gradients below this are compared absolutely: central differences carry
# round-off noise of about 1e-10 at h=1e-5, and some entries (key biases)
# have an exactly zero gradient
GRAD_FLOOR = 1e-5


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst: str  # "<tensor>[<flat index>]"
    tensors: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def small_config(**kw) -> BlendConfig:
    base = dict(T=16, d_model=16, heads=2, layers=2, ffn_dim=32, kf_hidden=16, context_len=3,
                min_gap=2, max_gap=10, r=3)
    base.update(kw)
    return BlendConfig(**base)


def random_batch(J: int, cfg: BlendConfig, rng: np.random.Generator, batch: int = 2):
    """Random target windows of length T and their masked inputs."""
    T, ctx = cfg.T, cfg.context_len
    c = channels(J)
    target = np.zeros((batch, T, frame_dim(J)))
    target[..., c["rot"]] = rng.normal(size=(batch, T, J * 6))
    target[..., c["root"]] = rng.normal(scale=0.5, size=(batch, T, 3))
    target[..., c["contacts"]] = (rng.random((batch, T, 4)) < 0.5).astype(float)
    k0, k1 = ctx - 1, T - ctx
    target[:, k0 + 1:k1, -1] = 1.0
    x = target.copy()
    x[:, k0 + 1:k1, :-1] = 0.0
    return torch.from_numpy(x), torch.from_numpy(target), (k0, k1)


def gradient_check(model: BlendModel | None = None, skeleton: Skeleton | None = None,
                   cfg: BlendConfig | None = None, n_params: int = 200, h: float = 1e-5, seed: int = 0,
                   corrupt: str | None = None, batch=None) -> GradCheckResult:
    """Max relative error between autograd and central differences.

    At least one entry of every parameter tensor is checked. ``corrupt`` names a
    tensor whose gradient is deliberately scaled, to confirm the check can fail.
    """
    skeleton = skeleton or chain_skeleton(4)
    if model is None:
        cfg = cfg or small_config(seed=seed)
        model = BlendModel(skeleton.J, cfg)
        # the output layer starts at zero, which would hide most gradients
        torch.manual_seed(seed)
        for net in (model.net, model.refiner):
            if net is not None:
                torch.nn.init.normal_(net.out_proj.weight, std=0.3)
                torch.nn.init.normal_(net.out_proj.bias, std=0.3)
    cfg = model.cfg
    model = model.double()
    rng = np.random.default_rng(seed)
    x, target, kf = batch or random_batch(skeleton.J, cfg, rng)
    x, target = x.double(), target.double()
    missing = torch.zeros(x.shape[1], dtype=torch.bool)
    missing[kf[0] + 1:kf[1]] = True

    def loss_fn():
        return total_loss(skeleton, run_progressive(model, x, kf), target, missing, cfg)

    params = dict(model.named_parameters())
    hooks = []
    if corrupt is not None:
        hooks.append(params[corrupt].register_hook(lambda g: g * 1.1 + 1e-3))
    model.zero_grad()
    loss_fn().backward()
    for hk in hooks:
        hk.remove()
    grads = {n: p.grad.detach().clone() for n, p in params.items()}

    names = list(params)
    picks = [(n, int(rng.integers(params[n].numel()))) for n in names]
    sizes = np.array([params[n].numel() for n in names], dtype=float)
    while len(picks) < n_params:
        n = names[int(rng.choice(len(names), p=sizes / sizes.sum()))]
        picks.append((n, int(rng.integers(params[n].numel()))))

    worst, worst_at = 0.0, ""
    with torch.no_grad():
        for n, k in picks:
            flat = params[n].view(-1)
            old = flat[k].item()
            flat[k] = old + h
            fp = loss_fn().item()
            flat[k] = old - h
            fm = loss_fn().item()
            flat[k] = old
            num = (fp - fm) / (2 * h)
            ana = grads[n].view(-1)[k].item()
            rel = abs(ana - num) / max(abs(ana), abs(num), GRAD_FLOOR)
            if rel > worst:
                worst, worst_at = rel, f"{n}[{k}]"
    return GradCheckResult(worst, len(picks), worst_at, len(names))
