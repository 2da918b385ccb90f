"""Network parameter file format.

Layout (all little-endian):

  offset  size  field
  0       4     magic "OCTW"
  4       2     format version (currently 1)
  6       4     u32 descriptor length D
  10      D     UTF-8 JSON architecture descriptor
  10+D    8     u64 parameter count P
  18+D    4*P   float32 weights, declaration order

The descriptor is whatever the model's config serializes to; loading
reconstructs the network from it and validates the weight count twice
(header vs descriptor-implied vs payload length).
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import MalformedFileError
from .model import ModelConfig, UNet

MAGIC = b"OCTW"
VERSION = 1
_HEAD = struct.Struct("<4sHI")
_COUNT = struct.Struct("<Q")

__all__ = ["save_params", "load_params", "write_blob", "read_blob"]


def write_blob(path, descriptor_json: str, flat_weights: np.ndarray) -> None:
    desc = descriptor_json.encode("utf-8")
    flat = np.ascontiguousarray(flat_weights, dtype="<f4")
    with open(os.fspath(path), "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, len(desc)))
        f.write(desc)
        f.write(_COUNT.pack(flat.size))
        f.write(flat.tobytes())


def read_blob(path):
    """Returns (descriptor_json, flat float32 weights)."""
    path = os.fspath(path)
    with open(path, "rb") as f:
        head = f.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise MalformedFileError(f"{path}: truncated header")
        magic, version, dlen = _HEAD.unpack(head)
        if magic != MAGIC:
            raise MalformedFileError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise MalformedFileError(f"{path}: unsupported format version {version}")
        desc = f.read(dlen)
        if len(desc) < dlen:
            raise MalformedFileError(f"{path}: truncated descriptor")
        count_raw = f.read(_COUNT.size)
        if len(count_raw) < _COUNT.size:
            raise MalformedFileError(f"{path}: missing parameter count")
        (count,) = _COUNT.unpack(count_raw)
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise MalformedFileError(
                f"{path}: truncated weights ({len(payload)} of {4 * count} bytes)"
            )
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(flat)):
        raise MalformedFileError(f"{path}: non-finite weights")
    return desc.decode("utf-8"), flat


def save_params(path, model: UNet) -> None:
    write_blob(path, model.cfg.to_json(), model.flatten_params())


def load_params(path, dtype=np.float32) -> UNet:
    desc_json, flat = read_blob(path)
    try:
        cfg = ModelConfig.from_json(desc_json)
    except Exception as exc:
        raise MalformedFileError(f"{path}: bad descriptor ({exc})") from exc
    model = UNet(cfg, seed=0, dtype=dtype)
    expected = model.param_count()
    if flat.size != expected:
        raise MalformedFileError(
            f"{path}: descriptor implies {expected} weights, file holds {flat.size}"
        )
    model.load_flat(flat)
    return model
