"""File formats: clips, scenes, schedules, timed paths, databases, project config.

Every writer goes through a temp file in the target directory followed by a
rename, so readers never observe partial files.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import MotionClip, Skeleton
from .errors import SchemaError, ValidationError


# --- atomic writes -------------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})") from None


# --- clips -------------------------------------------------------------------

def _num_list(x, n: int, where: str) -> list[float]:
    if not isinstance(x, list) or len(x) != n:
        raise SchemaError(f"{where}: expected a list of {n} numbers")
    for k, v in enumerate(x):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}[{k}]: expected a number, got {v!r}")
    return [float(v) for v in x]


def skeleton_from_dict(d, where: str = "skeleton") -> Skeleton:
    if not isinstance(d, dict) or not {"joints", "foot_indices", "upper_body_indices"} <= set(d):
        raise SchemaError(f"{where}: needs joints, foot_indices, upper_body_indices")
    if not isinstance(d["joints"], list):
        raise SchemaError(f"{where}.joints: expected a list")
    for i, j in enumerate(d["joints"]):
        if not isinstance(j, dict) or set(j) != {"name", "parent", "offset"}:
            raise SchemaError(f"{where}.joints[{i}]: needs name, parent, offset")
        _num_list(j["offset"], 3, f"{where}.joints[{i}].offset")
    try:
        return Skeleton.from_dict(d)
    except (ValidationError, TypeError) as e:
        raise SchemaError(f"{where}: {e}") from None


def motion_to_dict(clip: MotionClip, skeleton: Skeleton) -> dict:
    if skeleton.J != clip.J:
        raise ValidationError(f"clip has {clip.J} joints, skeleton has {skeleton.J}")
    return {
        "fps": float(clip.fps),
        "label": clip.label,
        "id": clip.id,
        "skeleton": skeleton.to_dict(),
        "frames": [{"rot6d": clip.rot6d[i].tolist(), "root_pos": clip.root_pos[i].tolist(),
                    "contacts": clip.contacts[i].tolist()} for i in range(len(clip))],
    }


def motion_from_dict(d, default_id: str = "") -> MotionClip:
    if not isinstance(d, dict):
        raise SchemaError("clip document must be an object")
    missing = {"fps", "label", "skeleton", "frames"} - set(d)
    if missing:
        raise SchemaError(f"clip document lacks {sorted(missing)}")
    fps = d["fps"]
    if isinstance(fps, bool) or not isinstance(fps, (int, float)) or not fps > 0:
        raise SchemaError("fps: expected a positive number")
    if not isinstance(d["label"], str):
        raise SchemaError("label: expected a string")
    skel = skeleton_from_dict(d["skeleton"])
    frames = d["frames"]
    if not isinstance(frames, list) or len(frames) < 2:
        raise SchemaError("frames: expected a list of at least 2 frames")
    J = skel.J
    rot, root, con = [], [], []
    for i, f in enumerate(frames):
        w = f"frames[{i}]"
        if not isinstance(f, dict) or set(f) != {"rot6d", "root_pos", "contacts"}:
            raise SchemaError(f"{w}: needs exactly rot6d, root_pos, contacts")
        if not isinstance(f["rot6d"], list) or len(f["rot6d"]) != J:
            got = len(f["rot6d"]) if isinstance(f["rot6d"], list) else "no"
            raise SchemaError(f"{w}.rot6d: {got} joints, skeleton has {J}")
        rot.append([_num_list(r, 6, f"{w}.rot6d[{j}]") for j, r in enumerate(f["rot6d"])])
        root.append(_num_list(f["root_pos"], 3, f"{w}.root_pos"))
        c = _num_list(f["contacts"], 4, f"{w}.contacts")
        for k, v in enumerate(c):
            if v not in (0.0, 1.0):
                raise SchemaError(f"{w}.contacts[{k}]: contact flags must be 0 or 1, got {v!r}")
        con.append(c)
    cid = d.get("id", default_id)
    try:
        return MotionClip(float(fps), np.array(rot), np.array(root), np.array(con), d["label"], cid, skel)
    except ValidationError as e:
        raise SchemaError(str(e)) from None


def save_motion(clip: MotionClip, path, skeleton: Skeleton | None = None) -> None:
    skeleton = skeleton or clip.skeleton
    if skeleton is None:
        raise ValidationError("saving a clip needs its skeleton")
    atomic_write_text(path, json.dumps(motion_to_dict(clip, skeleton)) + "\n")


def load_motion(path) -> MotionClip:
    try:
        return motion_from_dict(read_json(path), Path(path).stem)
    except SchemaError as e:
        raise SchemaError(f"{path}: {e}") from None


def load_motion_dir(path) -> list[MotionClip]:
    files = sorted(Path(path).glob("*.json"))
    if not files:
        raise ValidationError(f"no clip files in {path}")
    return [load_motion(f) for f in files]


# --- scene / schedule / timed path -----------------------------------------------

def load_scene(path):
    from .scheduler import Scene
    d = read_json(path)
    if not isinstance(d, dict) or set(d) != {"locations", "grid"}:
        raise SchemaError(f"{path}: scene needs exactly locations and grid")
    try:
        return Scene.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: {e}") from None


def save_scene(scene, path) -> None:
    atomic_write_text(path, dump_json(scene.to_dict()))


def load_schedule(path, scene=None):
    from .scheduler import Schedule
    try:
        return Schedule.from_records(read_json(path), scene)
    except ValidationError as e:
        raise SchemaError(f"{path}: {e}") from None


def save_schedule(schedule, path) -> None:
    atomic_write_text(path, dump_json(schedule.to_records()))


def load_timed_path(path):
    from .metrics import TimedPath
    d = read_json(path)
    if not isinstance(d, list) or not d:
        raise SchemaError(f"{path}: timed path must be a non-empty list of {{t, pos}}")
    for i, r in enumerate(d):
        if not isinstance(r, dict) or set(r) != {"t", "pos"}:
            raise SchemaError(f"{path}: entry {i} needs exactly t and pos")
        _num_list(r["pos"], 2, f"{path}: entry {i}.pos")
    try:
        return TimedPath.from_records(d)
    except ValidationError as e:
        raise SchemaError(f"{path}: {e}") from None


def save_timed_path(tp, path) -> None:
    atomic_write_text(path, dump_json(tp.to_records()))


# --- array bundles --------------------------------------------------------------

def bundle_bytes(magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """``magic | u64 header length | JSON header | raw little-endian arrays``."""
    specs, blobs = [], []
    for name, a in arrays.items():
        a = np.asarray(a)
        dt = "<f4" if a.dtype == np.float32 else "<f8"
        specs.append({"name": name, "dtype": dt, "shape": list(a.shape)})
        blobs.append(np.ascontiguousarray(a, dtype=dt).tobytes())
    hb = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode()
    return b"".join([magic, struct.pack("<Q", len(hb)), hb, *blobs])


def read_bundle(data: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:len(magic)] != magic:
        raise SchemaError("unrecognized file (bad magic)")
    off = len(magic)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off:off + hlen].decode())
    off += hlen
    arrays = {}
    for s in header["arrays"]:
        n = int(np.prod(s["shape"], dtype=np.int64))
        size = np.dtype(s["dtype"]).itemsize * n
        if off + size > len(data):
            raise SchemaError(f"file truncated in array {s['name']!r}")
        arrays[s["name"]] = np.frombuffer(data, dtype=s["dtype"], count=n, offset=off).reshape(s["shape"]).copy()
        off += size
    return header["meta"], arrays


# --- project config ---------------------------------------------------------------

@dataclass
class ProjectConfig:
    database: str | None = None
    scene: str | None = None
    schedule: str | None = None
    checkpoint: str | None = None
    output: str | None = None
    match: dict = field(default_factory=dict)
    blend: dict = field(default_factory=dict)
    database_config: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=lambda: {"kind": "hashing", "dim": 64, "seed": 0})
    llm: dict = field(default_factory=lambda: {"endpoint": None, "model": "gpt-3.5-turbo"})
    walk_speed: float = 1.4
    fps: float = 30.0
    seed: int = 0
    blend_gap: int = 10

    def __post_init__(self):
        if not self.fps > 0:
            raise ValidationError("fps must be positive")
        if not self.walk_speed > 0:
            raise ValidationError("walk_speed must be positive")

    @classmethod
    def load(cls, path) -> "ProjectConfig":
        d = read_json(path)
        if not isinstance(d, dict):
            raise SchemaError(f"{path}: config must be an object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def require(self, *names: str) -> None:
        """Fail unless the named path settings are set and exist."""
        for n in names:
            p = getattr(self, n)
            if p is None:
                raise ValidationError(f"no {n} path configured")
            if not Path(p).exists():
                raise ValidationError(f"{n} path {p} does not exist")
