"""Command-line interface.

Every command prints ``key=value`` lines on stdout. Failures print one
``error kind=<kind> message=<json string>`` line on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import StoryMotionError

log = logging.getLogger("storymotion")

EXIT_ERROR = 2


def _emit(**kv) -> None:
    for k, v in kv.items():
        sys.stdout.write(f"{k}={v}\n")


def _config(args):
    from .fileio import ProjectConfig
    return ProjectConfig.load(args.config) if args.config else ProjectConfig()


def _pick(value, fallback, what: str):
    v = value if value is not None else fallback
    if v is None:
        raise StoryMotionError(f"missing {what}: pass it on the command line or in --config")
    return v


def _seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg.seed)


def _db_config(cfg, seed: int, **over):
    from .database import AEConfig, DatabaseConfig
    d = dict(cfg.database_config)
    ae = AEConfig(**{**d.pop("ae", {}), "seed": seed})
    if "horizons" in d:
        d["horizons"] = tuple(d["horizons"])
    d.update(over)
    return DatabaseConfig(ae=ae, embed_dim=cfg.embedding.get("dim", 64),
                          embed_seed=cfg.embedding.get("seed", 0), **d)


def _provider(cfg):
    from .database import provider_from_spec
    return provider_from_spec(cfg.embedding)


# --- commands ------------------------------------------------------------------

def cmd_gen_synthetic(args, cfg):
    from .fileio import save_motion
    from .synthetic import SyntheticSpec, database_hash, generate_synthetic_database
    spec = SyntheticSpec() if args.meanders is None else SyntheticSpec(meanders=args.meanders)
    clips = generate_synthetic_database(spec, _seed(args, cfg))
    out = Path(args.out)
    for c in clips:
        save_motion(c, out / f"{c.id}.json")
    _emit(clips=len(clips), hash=database_hash(clips), out=out)


def cmd_ingest(args, cfg):
    from .database import MotionDatabase, save_database
    from .fileio import load_motion_dir
    clips = load_motion_dir(_pick(args.clips, None, "--clips"))
    skel = clips[0].skeleton
    seed = _seed(args, cfg)
    over = {"train_ae": False} if args.no_ae else {}
    db = MotionDatabase.build(clips, skel, _db_config(cfg, seed, **over), _provider(cfg))
    out = _pick(args.out, cfg.database, "--out")
    save_database(db, out)
    _emit(clips=len(db), learned=db.ae is not None, out=out)


def cmd_train_ae(args, cfg):
    from .database import AEConfig, ClipKinematics, ae_training_windows, load_database, save_database, train_autoencoder
    path = _pick(args.db, cfg.database, "--db")
    db = load_database(path)
    seed = _seed(args, cfg)
    ae_cfg = AEConfig(**{**asdict(db.cfg.ae), "seed": seed, **({"epochs": args.epochs} if args.epochs else {})})
    kins = [ClipKinematics.of(c, db.skeleton) for c in db.clips]
    windows, stats = ae_training_windows(kins, db.cfg.window)
    ae = train_autoencoder(windows, ae_cfg)
    db2 = db.with_autoencoder(ae, stats)
    out = args.out or path
    save_database(db2, out)
    _emit(windows=len(windows), initial_loss=ae.initial_loss, final_loss=ae.final_loss, out=out)


def cmd_train_blender(args, cfg):
    from .blender import BlendConfig, BlendModel, evaluate, save_checkpoint, train
    from .fileio import load_motion_dir
    from .skeletons import smpl_like_skeleton
    from .synthetic import blend_training_set
    seed = _seed(args, cfg)
    bd = {**cfg.blend, "seed": seed}
    if args.epochs is not None:
        bd["epochs"] = args.epochs
    bcfg = BlendConfig(**bd)
    if args.clips:
        clips = load_motion_dir(args.clips)
        skel = clips[0].skeleton
    else:
        skel = smpl_like_skeleton()
        clips = blend_training_set(args.sequences, 300, seed)
    model = BlendModel(skel.J, bcfg)
    model, hist = train(model, clips, skel, bcfg, max_seconds=args.max_minutes * 60 if args.max_minutes else None)
    out = _pick(args.out, cfg.checkpoint, "--out")
    save_checkpoint(model, out, skel, {"epoch_loss": hist.epoch_loss})
    _emit(epochs=len(hist.epoch_loss), first_loss=hist.epoch_loss[0], final_loss=hist.epoch_loss[-1],
          seconds=round(hist.seconds, 3), out=out)
    if args.eval_sequences:
        ev = evaluate(model, blend_training_set(args.eval_sequences, 300, seed + 1), skel, gap=30)
        _emit(l2p_first=ev.l2p_first, l2p_final=ev.l2p_final, l2p_interpolation=ev.l2p_interpolation)


def cmd_schedule(args, cfg):
    from .fileio import dump_json, load_scene, load_schedule, atomic_write_text, read_json
    from .scheduler import ReplayTransport, parse_story_via_llm
    scene = load_scene(_pick(args.scene, cfg.scene, "--scene"))
    if args.validate:
        sched = load_schedule(args.validate, scene)
        _emit(entries=len(sched.entries), duration_s=sum(e.duration_s for e in sched.entries), valid=True)
        return
    story = Path(_pick(args.story, None, "--story")).read_text(encoding="utf-8")
    transport = ReplayTransport(read_json(args.transcript)) if args.transcript else None
    endpoint = args.endpoint or cfg.llm.get("endpoint") or ("replay://fixture" if transport else None)
    endpoint = _pick(endpoint, None, "LLM endpoint")
    sched = parse_story_via_llm(story, scene, endpoint, cfg.llm.get("model", "gpt-3.5-turbo"), transport)
    out = _pick(args.out, cfg.schedule, "--out")
    atomic_write_text(out, dump_json(sched.to_records()))
    _emit(entries=len(sched.entries), out=out)


def _scheduler_from_args(args, cfg, fps):
    from .fileio import load_scene, load_schedule, load_timed_path
    from .scheduler import Scheduler, build_scheduler
    if args.path:
        tp = load_timed_path(args.path)
        return Scheduler.from_timed_path(tp.times, tp.points, args.text), tp
    scene = load_scene(_pick(args.scene, cfg.scene, "--scene"))
    sched = load_schedule(_pick(args.schedule, cfg.schedule, "--schedule"), scene)
    return build_scheduler(sched, scene, cfg.walk_speed, fps), None


def cmd_synthesize(args, cfg):
    from .database import load_database
    from .fileio import atomic_write_text, dump_json, save_motion
    from .metrics import evaluate
    from .plotting import plot_synthesis
    from .retrieval import MatchConfig, synthesize_sequence
    db = load_database(_pick(args.db, cfg.database, "--db"))
    fps = db.clips[0].fps
    scheduler, tp = _scheduler_from_args(args, cfg, fps)
    seed = _seed(args, cfg)
    if args.profile == "trajectory":
        mcfg = MatchConfig.trajectory_following(len(db), rng_seed=seed, horizons=db.cfg.horizons, **cfg.match)
    else:
        m = {**cfg.match}
        m.setdefault("horizons", db.cfg.horizons)
        mcfg = MatchConfig(rng_seed=seed, **m)
    res = synthesize_sequence(scheduler, db, mcfg)
    motion = res.motion
    ckpt = args.checkpoint or cfg.checkpoint
    if ckpt:
        from .blender import blend_junctions, junction_frames, load_checkpoint
        model, _ = load_checkpoint(ckpt)
        gap, ctx = cfg.blend_gap, model.cfg.context_len
        # the last placement is trimmed to the schedule end; skip junctions it cut into
        junctions = [j for j in junction_frames([len(p.motion) for p in res.placements])
                     if j - gap // 2 + gap + ctx <= len(motion)]
        motion = blend_junctions(motion, junctions, model, gap)
    out = Path(_pick(args.out, cfg.output, "--out"))
    save_motion(motion, out / "motion.json", db.skeleton)
    atomic_write_text(out / "provenance.json", dump_json(res.provenance))
    report = evaluate(motion, db.skeleton, path=tp)
    atomic_write_text(out / "report.txt", report.to_text())
    starts = [int(round(p.start_time * fps)) for p in res.placements]
    desired = None if tp is None else tp.at(np.arange(len(motion)) / fps)
    if desired is None:
        desired = np.array([scheduler.position(t) for t in np.arange(len(motion)) / fps])
    plot_synthesis(out / "synthesis.png", motion.root_pos[:, [0, 2]], starts,
                   [db.clips[p.clip_index].label for p in res.placements], desired)
    _emit(frames=len(motion), clips=len(res.placements), blended=bool(ckpt), out=out)
    sys.stdout.write(report.to_text())


def cmd_eval(args, cfg):
    from .fileio import atomic_write_text, load_motion, load_timed_path
    from .metrics import evaluate
    from .plotting import plot_trajectory
    motion = load_motion(args.motion)
    gt = load_motion(args.gt) if args.gt else None
    tp = load_timed_path(args.path) if args.path else None
    report = evaluate(motion, motion.skeleton, gt, tp, args.ground_eps)
    text = report.to_text()
    if args.out:
        atomic_write_text(args.out, text)
    if args.figure:
        desired = None if tp is None else tp.at(np.arange(len(motion)) / motion.fps)
        plot_trajectory(args.figure, motion.root_pos[:, [0, 2]], desired, motion.fps)
    sys.stdout.write(text)


def cmd_export_bvh(args, cfg):
    from .bvh import export_bvh
    from .fileio import load_motion
    motion = load_motion(args.motion)
    export_bvh(motion, motion.skeleton, args.out)
    _emit(frames=len(motion), out=args.out)


def cmd_gradcheck(args, cfg):
    from .blender import gradient_check
    res = gradient_check(n_params=args.params, seed=_seed(args, cfg), corrupt=args.corrupt)
    _emit(max_rel_error=res.max_rel_error, checked=res.n_checked, worst=res.worst, ok=res.ok)
    if not res.ok:
        raise StoryMotionError(f"gradient check failed: max relative error {res.max_rel_error:.3g}")


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="project config JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="storymotion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-synthetic", parents=[common], help="write the procedural clip set")
    s.add_argument("--out", required=True)
    s.add_argument("--meanders", type=int, default=None, help="number of long meandering walks to slice")
    s.set_defaults(fn=cmd_gen_synthetic)

    s = sub.add_parser("ingest", parents=[common], help="build a database from a clip directory")
    s.add_argument("--clips", required=True)
    s.add_argument("--out")
    s.add_argument("--no-ae", action="store_true", help="skip the autoencoder features")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("train-ae", parents=[common], help="(re)train the feature autoencoder")
    s.add_argument("--db")
    s.add_argument("--out")
    s.add_argument("--epochs", type=int)
    s.set_defaults(fn=cmd_train_ae)

    s = sub.add_parser("train-blender", parents=[common], help="train the transition model")
    s.add_argument("--clips", help="directory of long clips (default: synthetic walks)")
    s.add_argument("--sequences", type=int, default=200)
    s.add_argument("--out")
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-minutes", type=float)
    s.add_argument("--eval-sequences", type=int, default=0)
    s.set_defaults(fn=cmd_train_blender)

    s = sub.add_parser("schedule", parents=[common], help="story -> schedule, or validate a schedule")
    s.add_argument("--scene")
    s.add_argument("--story")
    s.add_argument("--transcript", help="replay a recorded LLM exchange instead of calling out")
    s.add_argument("--endpoint")
    s.add_argument("--validate", help="schedule file to check against the scene")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_schedule)

    s = sub.add_parser("synthesize", parents=[common], help="schedule + database -> motion")
    s.add_argument("--db")
    s.add_argument("--scene")
    s.add_argument("--schedule")
    s.add_argument("--path", help="timed path to follow instead of a schedule")
    s.add_argument("--text", default="walking", help="action text used with --path")
    s.add_argument("--checkpoint")
    s.add_argument("--profile", choices=("default", "trajectory"), default="default")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_synthesize)

    s = sub.add_parser("eval", parents=[common], help="metrics for a motion file")
    s.add_argument("--motion", required=True)
    s.add_argument("--gt")
    s.add_argument("--path")
    s.add_argument("--ground-eps", type=float, default=0.02)
    s.add_argument("--out")
    s.add_argument("--figure")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("export-bvh", parents=[common], help="write a motion file as BVH")
    s.add_argument("--motion", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_export_bvh)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the blender")
    s.add_argument("--params", type=int, default=200)
    s.add_argument("--corrupt", help="parameter whose gradient is deliberately broken")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        import torch
        torch.set_num_threads(1)
        args.fn(args, _config(args))
    except (StoryMotionError, ValueError, OSError, KeyError) as e:
        kind = getattr(e, "kind", type(e).__name__.lower())
        sys.stderr.write(f"error kind={kind} message={json.dumps(str(e))}\n")
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
