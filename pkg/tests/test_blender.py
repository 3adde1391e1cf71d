import math
from fractions import Fraction

import numpy as np
import pytest
import torch

from storymotion.blender import (
    BlendConfig, BlendModel, MaskedWindow, attention_mask, blend_clips, blend_junctions, foot_loss,
    forward, gradient_check, interpolate_window, junction_frames, load_checkpoint, masked_count,
    masked_frames, pos_loss, progressive_infer, save_checkpoint, state_loss, train,
)
from storymotion.blender.checkpoint import checkpoint_bytes
from storymotion.blender.gradcheck import small_config
from storymotion.blender.model import run_progressive
from storymotion.blender.window import channels, clip_to_frames, frame_dim, frames_to_clip
from storymotion.errors import SchemaError, ValidationError
from storymotion.skeletons import chain_skeleton
from storymotion.synthetic import blend_training_set

J = 4


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def _randomize_output(model, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for net in filter(None, [model.net, model.refiner]):
            net.out_proj.weight.copy_(torch.randn(net.out_proj.weight.shape, generator=g) * 0.3)
            net.out_proj.bias.copy_(torch.randn(net.out_proj.bias.shape, generator=g) * 0.3)
    return model


@pytest.fixture
def model():
    return _randomize_output(BlendModel(J, small_config()).double())


def _window(cfg, gap, rng):
    D = frame_dim(J)
    ctx = cfg.context_len
    prev = rng.normal(size=(ctx, D))
    nxt = rng.normal(size=(ctx, D))
    return MaskedWindow.from_contexts(prev, nxt, gap)


# --- mask schedule -------------------------------------------------------------

def test_mask_schedule_exact():
    for r in (2, 3, 4):
        for M in range(61):
            counts = [masked_count(i, r, M) for i in range(r)]
            assert counts[0] == M and counts[-1] == 0
            assert all(a >= b for a, b in zip(counts, counts[1:]))
            assert counts == [_round_half_up(Fraction(M * (r - 1 - i), r - 1)) for i in range(r)]
    assert [masked_count(i, 3, 20) for i in range(3)] == [20, 10, 0]
    assert masked_count(0, 1, 12) == 0
    with pytest.raises(ValidationError):
        masked_count(3, 3, 5)


def test_masked_frames_near_centre():
    assert masked_frames(1, 3, (10, 20)).tolist() == [12, 13, 14, 15, 16]
    assert masked_frames(1, 3, (10, 19)).tolist() == [12, 13, 14, 15, 16]
    assert masked_frames(0, 3, (10, 20)).tolist() == list(range(10, 20))
    assert masked_frames(2, 3, (10, 20)).tolist() == []


def test_attention_mask_structure():
    allow = attention_mask(0, 3, (3, 13), 16, 3)
    hidden = np.zeros(16, bool)
    hidden[3:13] = True
    for q in range(16):
        for k in range(16):
            assert allow[q, k] == (not hidden[k] or q == k)
    assert attention_mask(2, 3, (3, 13), 16, 3).all()
    assert attention_mask(0, 3, (5, 5), 16, 3).all()
    with pytest.raises(ValidationError):
        attention_mask(0, 3, (2, 14), 16, 3)


# --- network -------------------------------------------------------------------

def test_output_shape(model, rng):
    w = _window(model.cfg, 8, rng)
    assert forward(model, w, 0).shape == (w.T, frame_dim(J))
    with pytest.raises(ValidationError):
        forward(BlendModel(5, small_config()).double(), w, 0)
    with pytest.raises(ValidationError):
        forward(model, w, 3)


def test_masked_input_perturbation_invariance(model, rng):
    w = _window(model.cfg, 8, rng)
    base = forward(model, w, 0)
    # masked frames are zero-filled by contract, so feed the raw network directly
    x = torch.as_tensor(w.frames)[None].clone()
    from storymotion.blender.model import net_forward
    y0 = net_forward(model, x, w.keyframes, 0)
    x[0, w.missing, :-1] += torch.as_tensor(rng.normal(size=(w.gap, frame_dim(J) - 1)))
    y1 = net_forward(model, x, w.keyframes, 0)
    np.testing.assert_array_equal(y0.detach().numpy(), y1.detach().numpy())
    np.testing.assert_array_equal(y0[0].detach().numpy(), base)
    # at later passes masked frames carry estimates, and a visible one does matter
    y2 = net_forward(model, x, w.keyframes, 2)
    x[0, w.keyframes[0] + 1, :-1] += 1.0
    assert not torch.equal(y2, net_forward(model, x, w.keyframes, 2))


def test_step_embedding_changes_output(model, rng):
    w = _window(model.cfg, 8, rng)
    cfg = model.cfg
    v = BlendModel(J, BlendConfig(**{**cfg.to_dict(), "attention": "vanilla"})).double()
    v.load_state_dict(model.state_dict())
    assert not np.allclose(forward(v, w, 0), forward(v, w, 1))


def test_vanilla_attention_differs(model, rng):
    w = _window(model.cfg, 8, rng)
    v = BlendModel(J, BlendConfig(**{**model.cfg.to_dict(), "attention": "vanilla"})).double()
    v.load_state_dict(model.state_dict())
    assert not np.allclose(forward(v, w, 0), forward(model, w, 0))


def test_progressive_preserves_context(model, rng):
    w = _window(model.cfg, 8, rng)
    outs = progressive_infer(model, w, return_all=True)
    assert len(outs) == 3
    for y in outs:
        np.testing.assert_array_equal(y[~w.missing], w.frames[~w.missing])
    one = progressive_infer(model, w, r=1)
    single = forward(model, w, 0, r=1)
    np.testing.assert_allclose(one[w.missing], single[w.missing], atol=1e-12)


def test_no_missing_frames_returns_input(model, rng):
    w = _window(model.cfg, 0, rng)
    np.testing.assert_array_equal(progressive_infer(model, w), w.frames)


def test_two_stage_disabled_matches_single_stage(rng):
    cfg = small_config()
    single = BlendModel(J, cfg).double()
    double = BlendModel(J, BlendConfig(**{**cfg.to_dict(), "two_stage": True})).double()
    _randomize_output(single, 1)
    _randomize_output(double, 1)
    w = _window(cfg, 8, rng)
    x = torch.as_tensor(w.frames)[None]
    a = run_progressive(single, x, w.keyframes)
    b = run_progressive(double, x, w.keyframes)
    assert len(b) == len(a) + 1
    for p, q in zip(a, b):
        assert torch.equal(p, q)
    assert not torch.equal(b[-1], b[-2])


def test_masked_window_validation(rng):
    D = frame_dim(J)
    f = np.zeros((10, D))
    f[3:7, -1] = 1.0
    MaskedWindow(f, (2, 7))
    with pytest.raises(ValidationError):
        MaskedWindow(f, (2, 8))
    g = f.copy()
    g[4, 0] = 1.0
    with pytest.raises(ValidationError, match="zero-filled"):
        MaskedWindow(g, (2, 7))


# --- losses --------------------------------------------------------------------

def _pair(rng, L=2):
    D = frame_dim(J)
    t = torch.as_tensor(rng.normal(size=(1, L, D)))
    return t.clone(), t


def test_losses_zero_on_equal(rng):
    p, t = _pair(rng, 5)
    missing = torch.tensor([False, True, True, True, False])
    assert state_loss(p, t, missing).item() == 0.0
    g = torch.as_tensor(rng.normal(size=(1, 5, J, 3)))
    assert pos_loss(g, g.clone(), missing, lambda_s=0.0).item() == 0.0
    static = g[:, :1].expand(1, 5, J, 3)
    assert pos_loss(static, static.clone(), missing).item() == 0.0
    assert foot_loss(torch.zeros(1, 5, 4), torch.as_tensor(rng.normal(size=(1, 5, 4, 3))), missing).item() == 0.0
    assert foot_loss(torch.ones(1, 5, 4), torch.zeros(1, 5, 4, 3), missing).item() == 0.0


def test_foot_loss_one_moving_foot():
    c = torch.ones(1, 3, 4, dtype=torch.float64)
    v = torch.zeros(1, 3, 4, 3, dtype=torch.float64)
    v[0, :, 2, 2] = 0.3
    assert foot_loss(c, v).item() == pytest.approx(0.3 / 4, abs=1e-12)


def test_state_loss_contact_term():
    D = frame_dim(J)
    c = channels(J)
    t = torch.zeros(1, 3, D, dtype=torch.float64)
    p = t.clone()
    p[0, 1, c["contacts"]] = 1.0
    missing = torch.tensor([False, True, False])
    assert state_loss(p, t, missing, 1.0, 0.0, 0.0).item() == pytest.approx(1.0, abs=1e-12)
    assert state_loss(p, t, missing, 2.0, 2.0, 2.0).item() == pytest.approx(
        2 * state_loss(p, t, missing, 1.0, 1.0, 1.0).item(), abs=1e-12)


def test_state_loss_two_frame_fixture():
    D = frame_dim(J)
    c = channels(J)
    t = torch.zeros(1, 2, D, dtype=torch.float64)
    p = t.clone()
    p[0, 1, c["rot"].start] = 2.0  # smooth-L1: 2 - 0.5 = 1.5
    p[0, 1, c["root"].start] = 0.5  # smooth-L1: 0.5 * 0.25 = 0.125
    p[0, 1, c["contacts"].start] = 0.4
    p[0, 0, c["root"].start] = 9.0  # context frame, ignored
    missing = torch.tensor([False, True])
    expected = 0.1 * 0.4 / 4 + 1.0 * 1.5 / (6 * J) + 1.0 * 0.125 / 3
    assert state_loss(p, t, missing).item() == pytest.approx(expected, abs=1e-12)


def test_pos_loss_two_frame_fixture():
    g = torch.zeros(1, 2, J, 3, dtype=torch.float64)
    gh = g.clone()
    gh[0, 1, 0, 0] = 0.2  # smooth-L1 0.5*0.04 = 0.02
    gh[0, 1, 1, 1] = -3.0  # 3 - 0.5 = 2.5
    missing = torch.tensor([False, True])
    dist = (0.02 + 2.5) / (J * 3)
    # velocity of frame 1 with fps 30: 30 * (gh1 - gh0); absolute sum 30 * 3.2
    vel = 30.0 * 3.2 / (J * 3)
    assert pos_loss(gh, g, missing, 0.0).item() == pytest.approx(dist, abs=1e-12)
    assert pos_loss(gh, g, missing, 0.1, fps=30.0).item() == pytest.approx(dist + 0.1 * vel, abs=1e-12)
    static = torch.ones(1, 2, J, 3, dtype=torch.float64)
    assert pos_loss(static, static + 0.5, missing, 0.1).item() == pytest.approx(0.125, abs=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        state_loss(torch.zeros(1, 2, frame_dim(J)), torch.zeros(1, 3, frame_dim(J)), torch.ones(2, dtype=bool))


# --- checkpoint ----------------------------------------------------------------

def test_checkpoint_round_trip(model, tmp_path, rng):
    sk = chain_skeleton(J)
    p = tmp_path / "m.ckpt"
    m = model.float()
    save_checkpoint(m, p, sk, {"note": "x"})
    back, header = load_checkpoint(p)
    assert checkpoint_bytes(back, sk, {"note": "x"}) == p.read_bytes()
    assert header["extra"] == {"note": "x"}
    for (a, x), (b, y) in zip(m.state_dict().items(), back.state_dict().items()):
        assert a == b and torch.equal(x, y)
    w = _window(m.cfg, 8, rng)
    np.testing.assert_array_equal(progressive_infer(m, w), progressive_infer(back, w))
    data = p.read_bytes()
    (tmp_path / "bad").write_bytes(data[:-3])
    with pytest.raises(SchemaError):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "bad").write_bytes(b"nope" + data[4:])
    with pytest.raises(SchemaError):
        load_checkpoint(tmp_path / "bad")


# --- transitions ---------------------------------------------------------------

@pytest.fixture(scope="module")
def smpl_model(skeleton):
    return BlendModel(skeleton.J, small_config(T=30, min_gap=2, max_gap=20)).double()


def test_blend_clips_contract(smpl_model, small_clips):
    clip = small_clips[0]
    frames = clip_to_frames(clip)
    ctx = smpl_model.cfg.context_len
    prev, nxt = frames[:ctx], frames[20:20 + ctx]
    assert len(blend_clips(smpl_model, prev, nxt, 0)) == 0
    tr = blend_clips(smpl_model, prev, nxt, 8)
    assert len(tr) == 8
    # untrained output head: the transition is the keyframe interpolation
    root = channels(clip.J)["root"]
    np.testing.assert_allclose(tr.root_pos[0], prev[-1, root] + (nxt[0, root] - prev[-1, root]) / 9, atol=1e-9)
    for gap in (1, 21):
        with pytest.raises(ValidationError, match="trained range"):
            blend_clips(smpl_model, prev, nxt, gap)
    with pytest.raises(ValidationError):
        blend_clips(smpl_model, prev[:2], nxt, 8)


def test_blend_junctions_keeps_length(smpl_model, small_clips):
    motion = type(small_clips[0]).concatenate(small_clips[:3], label="x", id="x")
    js = junction_frames([40, 40, 40])
    assert js == [39, 78]
    out = blend_junctions(motion, [40, 80], smpl_model, 6)
    assert len(out) == len(motion)
    np.testing.assert_array_equal(out.root_pos[:37], motion.root_pos[:37])
    np.testing.assert_array_equal(out.root_pos[43:77], motion.root_pos[43:77])
    with pytest.raises(ValidationError):
        blend_junctions(motion, [2], smpl_model, 6)
    with pytest.raises(ValidationError, match="overlaps"):
        blend_junctions(motion, [40, 45], smpl_model, 6)


def test_interpolation_baseline_endpoints(small_clips):
    frames = clip_to_frames(small_clips[0])[:20]
    out = interpolate_window(frames, (4, 15))
    np.testing.assert_array_equal(out[:5], frames[:5])
    np.testing.assert_array_equal(out[15:], frames[15:])
    c = frames_to_clip(out, 30.0)
    assert len(c) == 20


# --- training and gradients ------------------------------------------------------

def _tiny_cfg(**kw):
    return small_config(T=24, context_len=3, min_gap=4, max_gap=12, epochs=3, steps_per_epoch=8,
                        batch_size=8, lr=1e-3, **kw)


def test_training_deterministic(skeleton):
    clips = blend_training_set(3, 60, seed=0)
    a, ha = train(BlendModel(skeleton.J, _tiny_cfg()), clips, skeleton)
    b, hb = train(BlendModel(skeleton.J, _tiny_cfg()), clips, skeleton)
    assert ha.epoch_loss == hb.epoch_loss
    for (k, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(x, y), k
    assert ha.epoch_loss[-1] <= ha.epoch_loss[0]
    with pytest.raises(ValidationError):
        train(BlendModel(skeleton.J, _tiny_cfg()), [], skeleton)


def test_gradient_check_detects_corruption():
    res = gradient_check(n_params=60, corrupt="net.blocks.0.ffn.0.weight")
    assert res.max_rel_error > 1e-2


def test_config_invariants():
    with pytest.raises(ValidationError):
        BlendConfig(r=0)
    with pytest.raises(ValidationError):
        BlendConfig(T=20, context_len=10)
    with pytest.raises(ValidationError):
        BlendConfig(lambda_s=-1.0)
    cfg = BlendConfig(d_model=32)
    assert BlendConfig.from_dict(cfg.to_dict()) == cfg
