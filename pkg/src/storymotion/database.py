"""Labeled clip database: matching features, z-score statistics, text search.

Each clip is matched at a single entry frame (the first frame with a full
learned-feature window behind it and a full trajectory horizon ahead) and
queried at its last frame when it is the tail of the synthesized motion.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .core import (
    CharacterFrame, MotionClip, Skeleton, clip_character_frames, clip_positions, joint_velocities,
    matrix_from_rot6d, rot6d_from_matrix, yaw_matrix,
)
from .errors import StoryMotionError, ValidationError

log = logging.getLogger(__name__)


# --- text embeddings -------------------------------------------------------

class HashingEmbedder:
    """Token feature hashing into ``dim`` buckets, L2-normalized."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._key = f"storymotion-embed-{seed}".encode()

    @staticmethod
    def tokens(text: str) -> list[str]:
        return [t for t in re.split(r"[^0-9a-z]+", text.lower()) if t]

    def bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode(), digest_size=8, key=self._key).digest()
        return int.from_bytes(h, "little") % self.dim

    def __call__(self, text: str) -> np.ndarray:
        toks = self.tokens(text)
        if not toks:
            raise ValidationError(f"text {text!r} has no tokens")
        v = np.zeros(self.dim)
        for t in toks:
            v[self.bucket(t)] += 1.0
        return v / np.linalg.norm(v)


class TableEmbedder:
    """Precomputed sentence embeddings keyed by exact text."""

    def __init__(self, table: dict[str, np.ndarray]):
        self.table = {}
        for k, v in table.items():
            v = np.asarray(v, dtype=float)
            n = np.linalg.norm(v)
            if not np.isfinite(n) or n == 0:
                raise ValidationError(f"embedding for {k!r} is zero or non-finite")
            self.table[k] = v / n
        dims = {v.shape for v in self.table.values()}
        if len(dims) > 1:
            raise ValidationError("embeddings have mixed dimensions")

    @classmethod
    def load(cls, path) -> "TableEmbedder":
        table = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    table[rec["text"]] = rec["embedding"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValidationError(f"{path}:{lineno}: bad embedding record ({exc})") from None
        return cls(table)

    def __call__(self, text: str) -> np.ndarray:
        if not text:
            raise ValidationError("empty text")
        try:
            return self.table[text].copy()
        except KeyError:
            raise ValidationError(f"no precomputed embedding for {text!r}") from None


def embed_text(provider, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise ValidationError("cannot embed empty text")
    return provider(text)


# --- normalization ---------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.mean.shape[0]:
            raise ValidationError(f"feature dimension {x.shape[-1]} != {self.mean.shape[0]}")
        live = self.std >= 1e-8
        out = np.zeros_like(x)
        out[..., live] = (x[..., live] - self.mean[live]) / self.std[live]
        return out

    def subset(self, sl: slice) -> "NormStats":
        return NormStats(self.mean[sl], self.std[sl])


def fit_normalizer(matrix) -> NormStats:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValidationError("normalizer needs a 2D matrix with at least 2 rows")
    return NormStats(m.mean(axis=0), m.std(axis=0))


def normalize(stats: NormStats, vector) -> np.ndarray:
    return stats.normalize(vector)


# --- hand-crafted features -------------------------------------------------

@dataclass
class FeatureSet:
    lower: np.ndarray
    upper: np.ndarray
    traj: np.ndarray
    learned: np.ndarray | None = None

    def handcrafted(self) -> np.ndarray:
        return np.concatenate([self.lower, self.upper, self.traj])


@dataclass
class ClipKinematics:
    """Per-frame quantities derived from one clip."""

    clip: MotionClip
    positions: np.ndarray  # (L, J, 3)
    velocities: np.ndarray  # (L, J, 3)
    ground: np.ndarray  # (L, 2)
    headings: np.ndarray  # (L,)

    @classmethod
    def of(cls, clip: MotionClip, skeleton: Skeleton) -> "ClipKinematics":
        pos = clip_positions(clip, skeleton)
        vel = joint_velocities(clip, pos)
        ground, headings = clip_character_frames(clip)
        return cls(clip, pos, vel, ground, headings)

    def frame_transform(self, i: int) -> CharacterFrame:
        return CharacterFrame(self.ground[i], float(self.headings[i]))


def pose_features(kin: ClipKinematics, skeleton: Skeleton, i: int) -> tuple[np.ndarray, np.ndarray]:
    """(f_lower, f_upper) at frame ``i`` in that frame's character-local space."""
    cf = kin.frame_transform(i)
    feet = [skeleton.foot_joint_indices[0], skeleton.foot_joint_indices[2]]
    upper = list(skeleton.upper_body_indices)
    p = cf.points_to_local(kin.positions[i])
    v = cf.vectors_to_local(kin.velocities[i])
    lower = np.concatenate([p[feet].ravel(), v[feet].ravel(), v[0]])
    up = np.concatenate([p[upper].ravel(), v[upper].ravel()])
    return lower, up


def extract_features(kin: ClipKinematics, skeleton: Skeleton, frame_idx: int,
                     horizons: Sequence[int]) -> FeatureSet:
    L = len(kin.clip)
    if frame_idx < 0 or frame_idx + max(horizons) >= L:
        raise ValidationError(f"frame {frame_idx} lacks a {max(horizons)}-frame horizon in a {L}-frame clip")
    lower, up = pose_features(kin, skeleton, frame_idx)
    cf = kin.frame_transform(frame_idx)
    idx = [frame_idx + h for h in horizons]
    fut_pos = cf.to_local(kin.ground[idx])
    fut_dir = cf.dir_to_local(np.stack([np.sin(kin.headings[idx]), np.cos(kin.headings[idx])], -1))
    traj = np.concatenate([fut_pos.ravel(), fut_dir.ravel()])
    return FeatureSet(lower, up, traj)


def frame_pose_vectors(kin: ClipKinematics) -> np.ndarray:
    """Per-frame full-body vectors fed to the autoencoder: rot6d, local root velocity, height."""
    rot6d = kin.clip.rot6d.copy()
    # heading removed from the root so the vectors are invariant to ground placement
    root = yaw_matrix(-kin.headings) @ matrix_from_rot6d(rot6d[:, 0])
    rot6d[:, 0] = rot6d_from_matrix(root)
    out = []
    for i in range(len(kin.clip)):
        v = kin.frame_transform(i).vectors_to_local(kin.velocities[i, 0])
        out.append(np.concatenate([rot6d[i].ravel(), v, kin.clip.root_pos[i, 1:2]]))
    return np.array(out)


# --- autoencoder -----------------------------------------------------------

@dataclass
class AEConfig:
    window: int = 10
    hidden: int = 256
    latent: int = 32
    epochs: int = 40
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    max_windows: int = 4096  # random subset used per training run


class AutoEncoder(nn.Module):
    def __init__(self, input_dim: int, hidden: int = 256, latent: int = 32):
        super().__init__()
        self.input_dim, self.hidden, self.latent = input_dim, hidden, latent
        self.encoder = nn.Sequential(nn.Linear(input_dim, hidden), nn.Tanh(), nn.Linear(hidden, latent))
        self.decoder = nn.Sequential(nn.Linear(latent, hidden), nn.Tanh(), nn.Linear(hidden, input_dim))
        self.final_loss = float("nan")
        self.initial_loss = float("nan")

    def forward(self, x):
        return self.decoder(self.encoder(x))

    def encode(self, windows) -> np.ndarray:
        x = np.asarray(windows, dtype=np.float32)
        single = x.ndim == 1
        x = x.reshape(1, -1) if single else x.reshape(len(x), -1)
        if x.shape[1] != self.input_dim:
            raise ValidationError(f"window dimension {x.shape[1]} != autoencoder input {self.input_dim}")
        with torch.no_grad():
            z = self.encoder(torch.from_numpy(x)).double().numpy()
        return z[0] if single else z

    def decode(self, latents) -> np.ndarray:
        z = np.asarray(latents, dtype=np.float32)
        single = z.ndim == 1
        with torch.no_grad():
            x = self.decoder(torch.from_numpy(np.atleast_2d(z))).double().numpy()
        return x[0] if single else x


def _reconstruction_loss(ae: AutoEncoder, x: torch.Tensor) -> float:
    with torch.no_grad():
        return float(torch.mean((ae(x) - x) ** 2))


def train_autoencoder(windows, cfg: AEConfig | None = None) -> AutoEncoder:
    """Mini-batch Adam on mean squared reconstruction error; seeded."""
    cfg = cfg or AEConfig()
    x = np.asarray(windows, dtype=np.float32)
    if x.shape[0] == 0:
        raise ValidationError("no windows to train on")
    if x.shape[0] < 10:
        raise ValidationError(f"need at least 10 windows, got {x.shape[0]}")
    x = torch.from_numpy(x.reshape(len(x), -1).copy())
    gen = torch.Generator().manual_seed(cfg.seed)
    if len(x) > cfg.max_windows:
        x = x[torch.randperm(len(x), generator=gen)[:cfg.max_windows]]
    torch.manual_seed(cfg.seed)
    ae = AutoEncoder(x.shape[1], cfg.hidden, cfg.latent)
    opt = torch.optim.Adam(ae.parameters(), lr=cfg.lr)
    ae.initial_loss = _reconstruction_loss(ae, x)
    for _ in range(cfg.epochs):
        perm = torch.randperm(len(x), generator=gen)
        for k in range(0, len(x), cfg.batch_size):
            xb = x[perm[k:k + cfg.batch_size]]
            loss = torch.mean((ae(xb) - xb) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
    ae.final_loss = _reconstruction_loss(ae, x)
    return ae


def encode_learned(ae: AutoEncoder, window) -> np.ndarray:
    return ae.encode(window)


# --- database --------------------------------------------------------------

@dataclass
class DatabaseConfig:
    horizons: tuple[int, ...] = (10, 20, 30)
    window: int = 10
    max_clip_seconds: float = 4.0
    embed_dim: int = 64
    embed_seed: int = 0
    ae: AEConfig = field(default_factory=AEConfig)
    train_ae: bool = True

    @property
    def entry_frame(self) -> int:
        return self.window - 1

    @property
    def min_frames(self) -> int:
        return self.entry_frame + max(self.horizons) + 1


def cut_clips(clips: Sequence[MotionClip], max_frames: int) -> list[MotionClip]:
    """Split clips longer than ``max_frames`` into near-equal chunks sharing boundary frames."""
    out = []
    for c in clips:
        L = len(c)
        if L <= max_frames:
            out.append(c)
            continue
        n = int(np.ceil((L - 1) / (max_frames - 1)))
        bounds = np.linspace(0, L - 1, n + 1).round().astype(int)
        for k in range(n):
            out.append(c.slice(bounds[k], bounds[k + 1] + 1, id=f"{c.id}#{k}"))
    return out


class MotionDatabase:
    """Immutable after :meth:`build`; all arrays are indexed by clip position."""

    def __init__(self, clips, skeleton, cfg, embeddings, entry, exit_, pose_mean, norm,
                 learned_norm, ae, embed_provider):
        self.clips: list[MotionClip] = clips
        self.skeleton: Skeleton = skeleton
        self.cfg: DatabaseConfig = cfg
        self.embeddings: dict[str, np.ndarray] = embeddings
        self.entry: list[FeatureSet] = entry
        self.exit: list[FeatureSet] = exit_
        self.pose_mean: np.ndarray = pose_mean
        self.norm: NormStats = norm
        self.learned_norm: NormStats | None = learned_norm
        self.ae: AutoEncoder | None = ae
        self.embed_provider = embed_provider
        self._build_matrices()

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def dims(self) -> tuple[int, int, int]:
        e = self.entry[0]
        return len(e.lower), len(e.upper), len(e.traj)

    def _build_matrices(self):
        nl, nu, nt = self.dims
        self.slices = {"lower": slice(0, nl), "upper": slice(nl, nl + nu), "traj": slice(nl + nu, nl + nu + nt)}
        self.entry_norm = self.norm.normalize(np.array([f.handcrafted() for f in self.entry]))
        self.exit_norm = self.norm.normalize(np.array([f.handcrafted() for f in self.exit]))
        if self.learned_norm is not None:
            self.entry_learned = self.learned_norm.normalize(np.array([f.learned for f in self.entry]))
            self.exit_learned = self.learned_norm.normalize(np.array([f.learned for f in self.exit]))
        else:
            self.entry_learned = self.exit_learned = None
        self.label_matrix = np.array([self.embeddings[c.label] for c in self.clips])
        self.ids = [c.id for c in self.clips]

    def embed(self, text: str) -> np.ndarray:
        return embed_text(self.embed_provider, text)

    @classmethod
    def build(cls, clips: Sequence[MotionClip], skeleton: Skeleton, cfg: DatabaseConfig | None = None,
              embed_provider=None) -> "MotionDatabase":
        cfg = cfg or DatabaseConfig()
        provider = embed_provider or HashingEmbedder(cfg.embed_dim, cfg.embed_seed)
        if not clips:
            raise ValidationError("no clips to ingest")
        clips = cut_clips(clips, int(round(cfg.max_clip_seconds * clips[0].fps)) + 1)
        short = [c.id for c in clips if len(c) < cfg.min_frames]
        if short:
            raise ValidationError(f"clips shorter than {cfg.min_frames} frames: {short}")
        if len({c.id for c in clips}) != len(clips):
            raise ValidationError("clip ids are not unique")
        for c in clips:
            if c.J != skeleton.J:
                raise ValidationError(f"clip {c.id!r} has {c.J} joints, skeleton has {skeleton.J}")
        kins = [ClipKinematics.of(c, skeleton) for c in clips]
        e0 = cfg.entry_frame
        entry, exit_, rows, pose_rows = [], [], [], []
        for kin in kins:
            L = len(kin.clip)
            for i in range(e0, L - max(cfg.horizons)):
                rows.append(extract_features(kin, skeleton, i, cfg.horizons).handcrafted())
            entry.append(extract_features(kin, skeleton, e0, cfg.horizons))
            lo, up = pose_features(kin, skeleton, L - 1)
            exit_.append(FeatureSet(lo, up, np.zeros_like(entry[-1].traj)))
            pose_rows.append(np.array([np.concatenate(pose_features(kin, skeleton, i)) for i in range(L)]))
        norm = fit_normalizer(np.array(rows))
        npose = len(entry[0].lower) + len(entry[0].upper)
        pose_norm = norm.subset(slice(0, npose))
        pose_mean = np.array([pose_norm.normalize(p).mean(axis=0) for p in pose_rows])

        ae = learned_norm = None
        if cfg.train_ae:
            ae, learned_norm = _fit_learned(kins, cfg, entry, exit_)
        embeddings = {}
        for c in clips:
            if c.label not in embeddings:
                embeddings[c.label] = embed_text(provider, c.label)
        return cls(list(clips), skeleton, cfg, embeddings, entry, exit_, pose_mean, norm,
                   learned_norm, ae, provider)

    def with_autoencoder(self, ae: AutoEncoder, frame_stats: NormStats) -> "MotionDatabase":
        """Copy of the database whose learned features come from ``ae``."""
        kins = [ClipKinematics.of(c, self.skeleton) for c in self.clips]
        entry = [FeatureSet(f.lower, f.upper, f.traj) for f in self.entry]
        exit_ = [FeatureSet(f.lower, f.upper, f.traj) for f in self.exit]
        learned_norm = _attach_learned(kins, self.cfg, ae, frame_stats, entry, exit_)
        return MotionDatabase(self.clips, self.skeleton, self.cfg, self.embeddings, entry, exit_,
                              self.pose_mean, self.norm, learned_norm, ae, self.embed_provider)


def _windows(frames_norm: np.ndarray, W: int) -> np.ndarray:
    return np.array([frames_norm[i - W + 1:i + 1].ravel() for i in range(W - 1, len(frames_norm))])


def ae_training_windows(kins, W: int) -> tuple[np.ndarray, NormStats]:
    per_clip = [frame_pose_vectors(k) for k in kins]
    frame_stats = fit_normalizer(np.concatenate(per_clip))
    windows = np.concatenate([_windows(frame_stats.normalize(p), W) for p in per_clip])
    return windows, frame_stats


def _fit_learned(kins, cfg: DatabaseConfig, entry, exit_):
    windows, frame_stats = ae_training_windows(kins, cfg.window)
    ae = train_autoencoder(windows, cfg.ae)
    ae.frame_stats = frame_stats
    return ae, _attach_learned(kins, cfg, ae, frame_stats, entry, exit_)


def _attach_learned(kins, cfg, ae, frame_stats, entry, exit_) -> NormStats:
    W = cfg.window
    all_latents = []
    for k, kin in enumerate(kins):
        z = ae.encode(_windows(frame_stats.normalize(frame_pose_vectors(kin)), W))
        all_latents.append(z)
        entry[k].learned = z[0]  # window ending at the entry frame W-1
        exit_[k].learned = z[-1]
    ae.frame_stats = frame_stats
    return fit_normalizer(np.concatenate(all_latents))


# --- text search & outliers ------------------------------------------------

def cosine_scores(db: MotionDatabase, query_embedding) -> np.ndarray:
    q = np.asarray(query_embedding, dtype=float)
    q = q / np.linalg.norm(q)
    return db.label_matrix @ q


def candidates_by_text(db: MotionDatabase, query_embedding, K1: int) -> list[tuple[int, float]]:
    """Top-K1 (clip index, cosine) by descending cosine, ties by clip id."""
    if len(db) == 0:
        raise StoryMotionError("database is empty")
    if K1 < 1:
        raise ValidationError("K1 must be >= 1")
    cos = cosine_scores(db, query_embedding)
    order = sorted(range(len(db)), key=lambda i: (-cos[i], db.ids[i]))
    return [(i, float(cos[i])) for i in order[:K1]]


def outlier_filter(db: MotionDatabase, candidates: Sequence[tuple[int, float]], k_sigma: float = 2.0,
                   min_keep: int = 3) -> list[tuple[int, float]]:
    """Drop candidates whose mean pose vector lies beyond mean + 2 std of centroid distances."""
    if not candidates:
        return []
    vecs = db.pose_mean[[i for i, _ in candidates]]
    return [candidates[k] for k in inlier_indices(vecs, k_sigma, min_keep)]


def inlier_indices(vectors: np.ndarray, k_sigma: float = 2.0, min_keep: int = 3) -> list[int]:
    n = len(vectors)
    d = np.linalg.norm(vectors - vectors.mean(axis=0), axis=1)
    keep = set(np.flatnonzero(d <= d.mean() + k_sigma * d.std()).tolist())
    keep.update(np.argsort(d, kind="stable")[:min(min_keep, n)].tolist())
    return sorted(keep)


# --- persistence -------------------------------------------------------------

DB_MAGIC = b"SMDB\x00\x01\x00\x00"


def provider_spec(provider) -> dict:
    if isinstance(provider, HashingEmbedder):
        return {"kind": "hashing", "dim": provider.dim, "seed": provider.seed}
    if isinstance(provider, TableEmbedder):
        return {"kind": "table", "table": {k: v.tolist() for k, v in provider.table.items()}}
    raise ValidationError(f"cannot persist embedding provider {type(provider).__name__}")


def provider_from_spec(spec: dict):
    kind = spec.get("kind")
    if kind == "hashing":
        return HashingEmbedder(int(spec.get("dim", 64)), int(spec.get("seed", 0)))
    if kind == "table":
        if "path" in spec:
            return TableEmbedder.load(spec["path"])
        return TableEmbedder(spec["table"])
    raise ValidationError(f"unknown embedding provider kind {kind!r}")


def database_bytes(db: MotionDatabase) -> bytes:
    from dataclasses import asdict
    from .fileio import bundle_bytes
    arrays = {
        "rot6d": np.concatenate([c.rot6d for c in db.clips]),
        "root_pos": np.concatenate([c.root_pos for c in db.clips]),
        "contacts": np.concatenate([c.contacts for c in db.clips]),
        "entry": np.array([f.handcrafted() for f in db.entry]),
        "exit_pose": np.array([np.concatenate([f.lower, f.upper]) for f in db.exit]),
        "pose_mean": db.pose_mean,
        "norm_mean": db.norm.mean, "norm_std": db.norm.std,
    }
    if db.ae is not None:
        arrays["entry_learned"] = np.array([f.learned for f in db.entry])
        arrays["exit_learned"] = np.array([f.learned for f in db.exit])
        arrays["learned_mean"], arrays["learned_std"] = db.learned_norm.mean, db.learned_norm.std
        arrays["frame_mean"], arrays["frame_std"] = db.ae.frame_stats.mean, db.ae.frame_stats.std
        for k, v in db.ae.state_dict().items():
            arrays[f"ae.{k}"] = v.numpy()
    cfg = asdict(db.cfg)
    meta = {
        "config": cfg,
        "skeleton": db.skeleton.to_dict(),
        "clips": [{"id": c.id, "label": c.label, "fps": c.fps, "frames": len(c)} for c in db.clips],
        "embeddings": {k: v.tolist() for k, v in db.embeddings.items()},
        "provider": provider_spec(db.embed_provider),
        "ae": None if db.ae is None else {"input_dim": db.ae.input_dim, "hidden": db.ae.hidden,
                                          "latent": db.ae.latent, "initial_loss": db.ae.initial_loss,
                                          "final_loss": db.ae.final_loss},
        "dims": list(db.dims),
    }
    return bundle_bytes(DB_MAGIC, meta, arrays)


def save_database(db: MotionDatabase, path) -> None:
    from .fileio import atomic_write_bytes
    atomic_write_bytes(path, database_bytes(db))


def load_database(path, embed_provider=None) -> MotionDatabase:
    from .fileio import read_bundle
    with open(path, "rb") as f:
        meta, a = read_bundle(f.read(), DB_MAGIC)
    skel = Skeleton.from_dict(meta["skeleton"])
    c = dict(meta["config"])
    c["ae"] = AEConfig(**c["ae"])
    c["horizons"] = tuple(c["horizons"])
    cfg = DatabaseConfig(**c)
    clips, off = [], 0
    for rec in meta["clips"]:
        n = rec["frames"]
        clips.append(MotionClip(rec["fps"], a["rot6d"][off:off + n], a["root_pos"][off:off + n],
                                a["contacts"][off:off + n], rec["label"], rec["id"], skel))
        off += n
    nl, nu, nt = meta["dims"]
    entry = [FeatureSet(r[:nl], r[nl:nl + nu], r[nl + nu:]) for r in a["entry"]]
    exit_ = [FeatureSet(r[:nl], r[nl:nl + nu], np.zeros(nt)) for r in a["exit_pose"]]
    ae = learned_norm = None
    if meta["ae"] is not None:
        m = meta["ae"]
        ae = AutoEncoder(m["input_dim"], m["hidden"], m["latent"])
        ae.load_state_dict({k[3:]: torch.from_numpy(v) for k, v in a.items() if k.startswith("ae.")})
        ae.initial_loss, ae.final_loss = m["initial_loss"], m["final_loss"]
        ae.frame_stats = NormStats(a["frame_mean"], a["frame_std"])
        learned_norm = NormStats(a["learned_mean"], a["learned_std"])
        for f, z in zip(entry, a["entry_learned"]):
            f.learned = z
        for f, z in zip(exit_, a["exit_learned"]):
            f.learned = z
    embeddings = {k: np.array(v) for k, v in meta["embeddings"].items()}
    provider = embed_provider or provider_from_spec(meta["provider"])
    return MotionDatabase(clips, skel, cfg, embeddings, entry, exit_, a["pose_mean"],
                          NormStats(a["norm_mean"], a["norm_std"]), learned_norm, ae, provider)
