import numpy as np
import pytest
import torch

from oracles import VOCAB, brute_scores, brute_text_ranking, relabeled_database
from storymotion.database import (
    AEConfig, DatabaseConfig, HashingEmbedder, MotionDatabase, TableEmbedder, candidates_by_text,
    cut_clips, database_bytes, fit_normalizer, inlier_indices, load_database, outlier_filter,
    save_database, train_autoencoder,
)
from storymotion.errors import ValidationError
from storymotion.retrieval import score_candidates


@pytest.fixture(scope="module")
def db200(skeleton):
    return relabeled_database(200, skeleton)


def _query_text(rng):
    return " ".join(rng.choice(VOCAB, size=rng.integers(1, 4)))


def test_text_ranking_matches_brute_force(db200):
    rng = np.random.default_rng(1)
    for _ in range(30):
        q = db200.embed(_query_text(rng))
        K1 = int(rng.integers(1, 201))
        ref, cos = brute_text_ranking(db200, q, K1)
        got = candidates_by_text(db200, q, K1)
        assert [i for i, _ in got] == ref
        np.testing.assert_allclose([c for _, c in got], [cos[i] for i in ref], atol=1e-12)


def test_feature_ranking_matches_brute_force(db200):
    rng = np.random.default_rng(2)
    for _ in range(10):
        cands = sorted(rng.choice(len(db200), size=50, replace=False).tolist())
        ref_entry = db200.entry[int(rng.integers(len(db200)))]
        raw = {b: getattr(ref_entry, b) + rng.normal(0, 0.05, getattr(ref_entry, b).shape)
               for b in ("lower", "upper", "traj")}
        w = {"lower": float(rng.uniform(0, 1)), "upper": float(rng.uniform(0, 1)), "traj": 1.0}
        nq = db200.norm.normalize(np.concatenate([raw[b] for b in ("lower", "upper", "traj")]))
        query = {b: nq[db200.slices[b]] for b in ("lower", "upper", "traj")}
        got = score_candidates(db200, query, cands, w)
        ref, s = brute_scores(db200, raw, cands, w)
        assert [i for i, _ in got] == ref
        np.testing.assert_allclose([x for _, x in got], [s[i] for i in ref], rtol=1e-9, atol=1e-9)


def test_ties_broken_by_clip_id(db200):
    q = db200.embed(db200.clips[0].label)
    got = candidates_by_text(db200, q, len(db200))
    for (i, a), (j, b) in zip(got, got[1:]):
        if a == b:
            assert db200.ids[i] < db200.ids[j]


def test_hashing_embedder():
    e = HashingEmbedder(64, 0)
    v = e("Walking  LEFT")
    assert np.linalg.norm(v) == pytest.approx(1.0)
    np.testing.assert_array_equal(v, e("walking left"))
    assert not np.array_equal(HashingEmbedder(64, 1)("walking"), e("walking"))
    with pytest.raises(ValidationError):
        e("  !! ")


def test_table_embedder(tmp_path):
    p = tmp_path / "emb.jsonl"
    p.write_text('{"text": "walk", "embedding": [3, 4]}\n\n{"text": "sit", "embedding": [0, 2]}\n')
    t = TableEmbedder.load(p)
    np.testing.assert_allclose(t("walk"), [0.6, 0.8])
    with pytest.raises(ValidationError):
        t("run")
    p.write_text('{"text": "walk"}\n')
    with pytest.raises(ValidationError, match=":1:"):
        TableEmbedder.load(p)


def test_normalizer_handles_constant_columns():
    st = fit_normalizer([[1.0, 5.0], [3.0, 5.0]])
    np.testing.assert_allclose(st.normalize([2.0, 7.0]), [0.0, 0.0])
    np.testing.assert_allclose(st.normalize([3.0, 5.0]), [1.0, 0.0])


def test_outlier_filter_drops_far_vector():
    rng = np.random.default_rng(0)
    v = rng.normal(0, 0.1, (20, 5))
    v[7] += 10.0
    keep = inlier_indices(v, 2.0)
    assert 7 not in keep and len(keep) == 19
    assert inlier_indices(v[:2], 2.0, min_keep=3) == [0, 1]


def test_outlier_filter_on_database(small_db):
    cands = candidates_by_text(small_db, small_db.embed("walking"), 30)
    kept = outlier_filter(small_db, cands)
    assert set(kept) <= set(cands)
    assert len(kept) >= 3


def test_cut_clips_share_boundaries(small_clips):
    c = small_clips[0]
    long = type(c).concatenate([c, c, c], label=c.label, id="long")
    parts = cut_clips([long], 50)
    assert all(len(p) <= 50 for p in parts)
    assert sum(len(p) for p in parts) - (len(parts) - 1) == len(long)
    np.testing.assert_array_equal(parts[0].root_pos[-1], parts[1].root_pos[0])


def test_build_rejects_short_and_duplicate(small_clips, skeleton):
    with pytest.raises(ValidationError, match="shorter"):
        MotionDatabase.build([small_clips[0].slice(0, 20)], skeleton, DatabaseConfig(train_ae=False))
    with pytest.raises(ValidationError, match="unique"):
        MotionDatabase.build([small_clips[0], small_clips[0]], skeleton, DatabaseConfig(train_ae=False))


def test_persistence_round_trip(full_db, tmp_path):
    p = tmp_path / "db.bin"
    save_database(full_db, p)
    back = load_database(p)
    assert database_bytes(back) == p.read_bytes()
    np.testing.assert_array_equal(back.entry_norm, full_db.entry_norm)
    np.testing.assert_array_equal(back.exit_learned, full_db.exit_learned)
    q = full_db.embed("walking turn left")
    assert candidates_by_text(back, q, 20) == candidates_by_text(full_db, q, 20)


def test_autoencoder_learns_and_is_deterministic():
    rng = np.random.default_rng(0)
    basis = rng.normal(size=(4, 30))
    x = rng.normal(size=(600, 4)) @ basis
    cfg = AEConfig(hidden=32, latent=4, epochs=30, batch_size=64)
    a, b = train_autoencoder(x, cfg), train_autoencoder(x, cfg)
    assert a.final_loss < 0.2 * a.initial_loss
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    with pytest.raises(ValidationError):
        train_autoencoder(x[:5], cfg)


def test_database_build_bitwise_reproducible(skeleton, full_db):
    from storymotion.synthetic import generate_synthetic_database
    again = MotionDatabase.build(generate_synthetic_database(seed=0), skeleton)
    assert database_bytes(again) == database_bytes(full_db)
