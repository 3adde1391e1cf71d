"""Binary checkpoint container.

Layout: magic, little-endian u32 format version, u64 header length, a UTF-8
JSON header (config snapshot, joint count, tensor names and shapes), then
every tensor as little-endian float32 in header order.
"""
from __future__ import annotations

import json
import struct

import numpy as np
import torch

from ..core import Skeleton
from ..errors import SchemaError
from ..fileio import atomic_write_bytes
from .config import BlendConfig
from .model import BlendModel

MAGIC = b"SMBLEND\x00"
FORMAT_VERSION = 1


def checkpoint_bytes(model: BlendModel, skeleton: Skeleton | None = None, extra: dict | None = None) -> bytes:
    state = model.state_dict()
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "J": model.J,
        "skeleton": None if skeleton is None else skeleton.to_dict(),
        "extra": extra or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hb)), hb]
    for v in state.values():
        parts.append(np.ascontiguousarray(v.detach().cpu().numpy(), dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: BlendModel, path, skeleton: Skeleton | None = None, extra: dict | None = None) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model, skeleton, extra))


def read_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:len(MAGIC)] != MAGIC:
        raise SchemaError("not a blend checkpoint (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, off)
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    off += 12
    try:
        header = json.loads(data[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError(f"corrupt checkpoint header: {e}") from e
    off += hlen
    tensors = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        if off + 4 * n > len(data):
            raise SchemaError(f"checkpoint truncated in tensor {t['name']!r}")
        tensors[t["name"]] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(t["shape"])
        off += 4 * n
    if off != len(data):
        raise SchemaError(f"{len(data) - off} trailing bytes after the last tensor")
    return header, tensors


def load_checkpoint(path) -> tuple[BlendModel, dict]:
    """Model (float32) and the raw header."""
    with open(path, "rb") as f:
        header, tensors = read_checkpoint(f.read())
    model = BlendModel(int(header["J"]), BlendConfig.from_dict(header["config"]))
    state = model.state_dict()
    if set(state) != set(tensors):
        raise SchemaError("checkpoint tensors do not match the model layout")
    model.load_state_dict({k: torch.from_numpy(np.array(v, dtype=np.float32)) for k, v in tensors.items()})
    model.eval()
    return model, header


def skeleton_of(header: dict) -> Skeleton | None:
    return None if header.get("skeleton") is None else Skeleton.from_dict(header["skeleton"])
