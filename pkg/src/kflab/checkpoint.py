"""Binary checkpoint container shared by every trainable component.

Layout (all integers little-endian):

    magic     5 ascii bytes, e.g. "KFLC1" (codec) or "KFDN1" (denoiser)
    u32       byte length of the config record
    bytes     config record: JSON object, sorted keys, utf-8
    u32       number of weight arrays
    per array:
        u16   name length, then name (utf-8)
        u8    ndim
        u32 * ndim   shape
        f32 * prod(shape)   data, little-endian, C order

Arrays are written sorted by name so that save -> load -> save is
byte-identical. Only float32 payloads are supported on purpose: every model
in this package is small enough that a flat f32 dump is the simplest thing
that round-trips exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CODEC_MAGIC = "KFLC1"
DENOISER_MAGIC = "KFDN1"
LIPREADER_MAGIC = "KFLR1"
NSV_MAGIC = "KFNS1"
EMOTION_MAGIC = "KFEM1"

_MAGIC_LEN = 5


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, magic: str, config: dict, arrays: dict) -> None:
    if len(magic.encode("ascii")) != _MAGIC_LEN:
        raise CheckpointError(f"magic must be {_MAGIC_LEN} ascii bytes, got {magic!r}")
    blob = bytearray()
    blob += magic.encode("ascii")
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    names = sorted(arrays)
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(_to_numpy(arrays[name]), dtype="<f4")
        enc = name.encode("utf-8")
        blob += struct.pack("<H", len(enc))
        blob += enc
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path, expect_magic: str | None = None):
    """Read a container. Returns (magic, config, {name: np.float32 array})."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint {path} at byte {off}")
        out = raw[off:off + n]
        off += n
        return out

    magic = take(_MAGIC_LEN).decode("ascii", errors="replace")
    if expect_magic is not None and magic != expect_magic:
        raise CheckpointError(f"{path}: magic {magic!r}, expected {expect_magic!r}")
    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arrays[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return magic, config, arrays


def save_module(path, magic: str, config: dict, module) -> None:
    """Dump a torch module's state dict into a container."""
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    save_checkpoint(path, magic, config, arrays)


def load_module(path, magic: str, module) -> dict:
    """Load a container into a torch module in place. Returns the config."""
    import torch

    _, config, arrays = load_checkpoint(path, expect_magic=magic)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    module.load_state_dict(state)
    return config


def _to_numpy(x):
    if isinstance(x, np.ndarray):
        return x
    if hasattr(x, "detach"):  # torch tensor
        return x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float32)
