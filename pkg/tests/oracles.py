"""Independent reference computations used by several test modules."""
import math

import numpy as np

from storymotion.database import DatabaseConfig, MotionDatabase
from storymotion.synthetic import generate_synthetic_database

VOCAB = ["walking", "walk", "turn", "left", "right", "slow", "fast", "idle", "wave", "hand",
         "sit", "down", "jog", "stroll", "look", "around"]


def relabeled_database(n_clips, skeleton, seed=0, train_ae=False):
    """First ``n_clips`` synthetic clips with random labels drawn from VOCAB."""
    rng = np.random.default_rng(seed)
    clips = generate_synthetic_database(seed=seed)[:n_clips]
    out = []
    for c in clips:
        words = rng.choice(VOCAB, size=rng.integers(1, 4), replace=False)
        out.append(c.with_arrays(label=" ".join(words)))
    return MotionDatabase.build(out, skeleton, DatabaseConfig(train_ae=train_ae))


def brute_cosines(db, q):
    qn = math.sqrt(sum(x * x for x in q))
    out = []
    for c in db.clips:
        e = db.embeddings[c.label]
        out.append(sum(a * b for a, b in zip(e, q)) / (qn * math.sqrt(sum(x * x for x in e))))
    return out


def brute_text_ranking(db, q, K1):
    cos = brute_cosines(db, q)
    return sorted(range(len(db)), key=lambda i: (-cos[i], db.ids[i]))[:K1], cos


def _norm(x, mean, std):
    return [(a - m) / s if s >= 1e-8 else 0.0 for a, m, s in zip(x, mean, std)]


def brute_scores(db, query_raw, candidates, weights):
    """Rank candidates by weighted per-block distances on raw (unnormalized) features."""
    names = ("lower", "upper", "traj")
    mean, std = db.norm.mean, db.norm.std
    qn = _norm(np.concatenate([query_raw[b] for b in names]), mean, std)
    s = {}
    for i in candidates:
        e = _norm(db.entry[i].handcrafted(), mean, std)
        total = 0.0
        for b in names:
            sl = db.slices[b]
            total += weights.get(b, 0.0) * math.sqrt(sum((a - c) ** 2 for a, c in zip(e[sl], qn[sl])))
        s[i] = total
    return sorted(candidates, key=lambda i: (s[i], db.ids[i])), s
