"""Auto-regressive clip matching against a scheduler S(t)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CharacterFrame, MotionClip, align_transform, character_frame, transform_clip
from .database import MotionDatabase, candidates_by_text, cosine_scores, outlier_filter
from .errors import StoryMotionError, UnmatchedTextError, ValidationError
from .scheduler import Scheduler

log = logging.getLogger(__name__)

BLOCKS = ("lower", "upper", "traj", "learned")


@dataclass
class MatchConfig:
    K1: int = 50
    K2: int = 10
    weights: dict[str, float] = field(default_factory=lambda: {
        "lower": 1.0, "upper": 0.5, "traj": 1.0, "learned": 0.5})
    horizons: tuple[int, ...] = (10, 20, 30)
    rng_seed: int = 0
    dynamic_target: bool = True
    outlier_sigma: float = 2.0

    @classmethod
    def trajectory_following(cls, n_clips: int, **kw) -> "MatchConfig":
        """Low-level path following: every clip is a candidate and the
        trajectory block dominates the score."""
        base = dict(K1=max(int(n_clips), 5), K2=5,
                    weights={"traj": 1.0, "lower": 0.05, "upper": 0.02, "learned": 0.02})
        base.update(kw)
        return cls(**base)

    def __post_init__(self):
        if not self.K1 >= self.K2 >= 1:
            raise ValidationError("need K1 >= K2 >= 1")
        unknown = set(self.weights) - set(BLOCKS)
        if unknown:
            raise ValidationError(f"unknown weight names {sorted(unknown)}")
        w = [self.weights.get(b, 0.0) for b in BLOCKS]
        if min(w) < 0 or max(w) <= 0:
            raise ValidationError("weights must be >= 0 with at least one > 0")


@dataclass
class Placement:
    clip_index: int
    clip_id: str
    start_time: float
    score: float
    motion: MotionClip  # world-space frames from the entry frame to the clip end


@dataclass
class SynthesisState:
    transform: CharacterFrame
    elapsed: float = 0.0
    tail: int | None = None
    placements: list[Placement] = field(default_factory=list)

    @property
    def provenance(self) -> list[tuple[str, float, float]]:
        return [(p.clip_id, p.start_time, p.score) for p in self.placements]


@dataclass
class SynthesisResult:
    motion: MotionClip
    placements: list[Placement]
    duration: float

    @property
    def provenance(self) -> list[dict]:
        return [{"clip_id": p.clip_id, "start_time": p.start_time, "score": p.score,
                 "frames": len(p.motion)} for p in self.placements]


# --- targets ---------------------------------------------------------------

def dynamic_target(scheduler: Scheduler, transform: CharacterFrame, elapsed: float,
                   horizons: Sequence[int], fps: float, dynamic: bool = True) -> np.ndarray:
    """Desired future trajectory in the character-local frame, laid out like f_traj.

    With ``dynamic`` the desired points are the schedule's absolute future
    positions, so drift from the path shows up in the local targets. Without
    it the schedule's displacement is re-anchored at the character (no pull-back).
    Times past the schedule end clamp to its final position.
    """
    t_now = min(elapsed, scheduler.duration)
    here = scheduler.position(t_now)
    pos, dirs = [], []
    fallback = transform.facing
    for h in horizons:
        t = min(t_now + h / fps, scheduler.duration)
        p = scheduler.position(t)
        if not dynamic:
            p = transform.position + (p - here)
        d = scheduler.tangent(t)
        pos.append(transform.to_local(p))
        dirs.append(transform.dir_to_local(fallback if d is None else d))
    return np.concatenate([np.ravel(pos), np.ravel(dirs)])


# --- scoring ---------------------------------------------------------------

def block_distances(db: MotionDatabase, query: dict[str, np.ndarray], idx: Sequence[int]) -> dict[str, np.ndarray]:
    idx = np.asarray(idx, dtype=int)
    out = {}
    for b in ("lower", "upper", "traj"):
        if query.get(b) is None:
            continue
        cand = db.entry_norm[idx][:, db.slices[b]]
        if query[b].shape[-1] != cand.shape[1]:
            raise ValidationError(f"{b} query has dimension {query[b].shape[-1]}, database {cand.shape[1]}")
        out[b] = np.linalg.norm(cand - query[b], axis=1)
    if query.get("learned") is not None and db.entry_learned is not None:
        cand = db.entry_learned[idx]
        if query["learned"].shape[-1] != cand.shape[1]:
            raise ValidationError("learned query dimension mismatch")
        out["learned"] = np.linalg.norm(cand - query["learned"], axis=1)
    return out


def score_candidates(db: MotionDatabase, query: dict[str, np.ndarray], candidates: Sequence[int],
                     weights: dict[str, float]) -> list[tuple[int, float]]:
    """Weighted sum of per-block Euclidean distances; ascending, ties by clip id."""
    if len(candidates) == 0:
        raise ValidationError("no candidates to score")
    d = block_distances(db, query, candidates)
    s = np.zeros(len(candidates))
    for b, dist in d.items():
        w = weights.get(b, 0.0)
        if w:
            s += w * dist
    order = sorted(range(len(candidates)), key=lambda k: (s[k], db.ids[candidates[k]]))
    return [(int(candidates[k]), float(s[k])) for k in order]


def select_next(scored: Sequence[tuple[int, float]], K2: int, rng: np.random.Generator) -> tuple[int, float]:
    n = min(K2, len(scored))
    return scored[int(rng.integers(n))]


def make_query(db: MotionDatabase, tail: int, traj_local: np.ndarray) -> dict[str, np.ndarray]:
    q = {b: db.exit_norm[tail, db.slices[b]] for b in ("lower", "upper")}
    q["traj"] = db.norm.subset(db.slices["traj"]).normalize(traj_local)
    q["learned"] = None if db.exit_learned is None else db.exit_learned[tail]
    return q


# --- placement -------------------------------------------------------------

def place_clip(state: SynthesisState, clip: MotionClip, clip_index: int | None = None, entry: int = 0,
               score: float = 0.0) -> SynthesisState:
    """Append ``clip[entry:]`` aligned so its entry frame sits on the current transform.

    The last frame becomes the new transform and is not counted as emitted:
    it coincides with the next clip's entry frame.
    """
    T = align_transform(clip, entry, state.transform)
    placed = transform_clip(clip.slice(entry, len(clip)), T)
    p = Placement(-1 if clip_index is None else clip_index, clip.id, state.elapsed, score, placed)
    return SynthesisState(
        character_frame(placed.frame(len(placed) - 1)),
        state.elapsed + (len(placed) - 1) / clip.fps,
        clip_index,
        state.placements + [p],
    )


# --- main loop -------------------------------------------------------------

def check_texts(db: MotionDatabase, texts: Sequence[str]) -> None:
    bad = [t for t in texts if cosine_scores(db, db.embed(t)).max() <= 1e-12]
    if bad:
        raise UnmatchedTextError(bad)


def stitch(placements: Sequence[Placement], n_frames: int | None = None) -> MotionClip:
    """Concatenate placements, dropping each junction's duplicated frame."""
    rot6d = [p.motion.rot6d[:-1] for p in placements]
    root = [p.motion.root_pos[:-1] for p in placements]
    contacts = [p.motion.contacts[:-1] for p in placements]
    last = placements[-1].motion
    rot6d.append(last.rot6d[-1:])
    root.append(last.root_pos[-1:])
    contacts.append(last.contacts[-1:])
    sl = slice(None, n_frames)
    return MotionClip(last.fps, np.concatenate(rot6d)[sl], np.concatenate(root)[sl],
                      np.concatenate(contacts)[sl], "synthesized", "synthesized", last.skeleton)


def synthesize_sequence(scheduler: Scheduler, db: MotionDatabase, cfg: MatchConfig | None = None,
                        trace: list | None = None) -> SynthesisResult:
    cfg = cfg or MatchConfig()
    if scheduler.duration <= 0:
        raise ValidationError("schedule duration must be positive")
    if len(db) == 0:
        raise StoryMotionError("database is empty")
    if tuple(cfg.horizons) != tuple(db.cfg.horizons):
        raise ValidationError("match horizons differ from the database horizons")
    check_texts(db, scheduler.texts())
    rng = np.random.default_rng(cfg.rng_seed)
    fps = db.clips[0].fps
    entry = db.cfg.entry_frame

    x0, y0, text0 = scheduler.sample(0.0)
    f0 = scheduler.initial_facing()
    state = SynthesisState(CharacterFrame(np.array([x0, y0]), float(np.arctan2(f0[0], f0[1]))))
    cos = cosine_scores(db, db.embed(text0))
    best = [i for i in range(len(db)) if cos[i] >= cos.max() - 1e-12]
    # no motion precedes the seed, so only its trajectory can be compared
    target = dynamic_target(scheduler, state.transform, 0.0, cfg.horizons, fps, cfg.dynamic_target)
    traj = db.norm.subset(db.slices["traj"]).normalize(target)
    scored = score_candidates(db, {"traj": traj, "lower": None, "upper": None}, best, {"traj": 1.0})
    seed, _ = select_next(scored, cfg.K2, rng)
    state = place_clip(state, db.clips[seed], seed, entry, float(cos[seed]))

    while state.elapsed < scheduler.duration - 1e-9:
        _, _, text = scheduler.sample(state.elapsed)
        cands = [c for c in candidates_by_text(db, db.embed(text), cfg.K1) if c[1] > 1e-12]
        cands = outlier_filter(db, cands, cfg.outlier_sigma)
        target = dynamic_target(scheduler, state.transform, state.elapsed, cfg.horizons, fps, cfg.dynamic_target)
        query = make_query(db, state.tail, target)
        scored = score_candidates(db, query, [i for i, _ in cands], cfg.weights)
        idx, score = select_next(scored, cfg.K2, rng)
        if trace is not None:
            trace.append({"time": state.elapsed, "text": text, "target": target, "scored": scored[:cfg.K2]})
        state = place_clip(state, db.clips[idx], idx, entry, score)

    n = int(np.floor(scheduler.duration * fps + 1e-9)) + 1
    return SynthesisResult(stitch(state.placements, n), state.placements, scheduler.duration)
