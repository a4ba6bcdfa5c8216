"""Binary checkpoint container: exact roundtrips, canonical byte layout, and
corruption detection."""

import struct

import numpy as np
import pytest
import torch

from kflab.checkpoint import (CODEC_MAGIC, DENOISER_MAGIC, EMOTION_MAGIC,
                              LIPREADER_MAGIC, NSV_MAGIC, CheckpointError,
                              load_checkpoint, load_module, save_checkpoint,
                              save_module)


def test_magics_distinct_five_bytes():
    magics = {CODEC_MAGIC, DENOISER_MAGIC, LIPREADER_MAGIC, NSV_MAGIC,
              EMOTION_MAGIC}
    assert len(magics) == 5
    assert all(len(m) == 5 and m.isascii() for m in magics)


def test_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "w": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.normal(size=7).astype(np.float32),
        "scalar": np.float32(2.5),
        "t": torch.randn(2, 2, 2),
    }
    config = {"depth": 3, "name": "x", "lr": 1e-3}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, CODEC_MAGIC, config, arrays)
    magic, cfg, loaded = load_checkpoint(path)
    assert magic == CODEC_MAGIC
    assert cfg == config
    assert set(loaded) == set(arrays)
    assert np.array_equal(loaded["w"], arrays["w"])
    assert np.array_equal(loaded["t"], arrays["t"].numpy())
    # 0-d inputs come back 1-d: contiguity coercion promotes scalars
    assert loaded["scalar"].shape == (1,) and loaded["scalar"][0] == np.float32(2.5)


def test_save_load_save_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {"z.weight": rng.normal(size=(5, 5)).astype(np.float32),
              "a.bias": rng.normal(size=5).astype(np.float32)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, NSV_MAGIC, {"k": 1}, arrays)
    _, cfg, loaded = load_checkpoint(p1)
    save_checkpoint(p2, NSV_MAGIC, cfg, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, CODEC_MAGIC, {}, {"w": np.zeros(2, dtype=np.float32)})
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path, expect_magic=DENOISER_MAGIC)
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "bad.ckpt", "TOOLONG", {}, {})


def test_corruption_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, CODEC_MAGIC, {"a": 1},
                    {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    raw = path.read_bytes()
    truncated = tmp_path / "t.ckpt"
    truncated.write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(truncated)
    padded = tmp_path / "p.ckpt"
    padded.write_bytes(raw + b"\x00\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(padded)
    # growing the declared array count runs off the end of the file
    resized = bytearray(raw)
    cfg_len = struct.unpack("<I", raw[5:9])[0]
    count_off = 9 + cfg_len
    resized[count_off:count_off + 4] = struct.pack("<I", 3)
    bad = tmp_path / "n.ckpt"
    bad.write_bytes(bytes(resized))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_module_roundtrip_bit_exact(tmp_path):
    torch.manual_seed(0)
    a = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.SiLU(),
                            torch.nn.Linear(8, 2))
    path = tmp_path / "mod.ckpt"
    save_module(path, EMOTION_MAGIC, {"hidden": 8}, a)
    torch.manual_seed(99)
    b = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.SiLU(),
                            torch.nn.Linear(8, 2))
    cfg = load_module(path, EMOTION_MAGIC, b)
    assert cfg == {"hidden": 8}
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)
    x = torch.randn(3, 4)
    assert torch.equal(a(x), b(x))
