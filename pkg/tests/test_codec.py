"""Frame autoencoder: shapes, latent scale calibration, training progress,
and checkpoint fidelity."""

import numpy as np
import pytest
import torch

from kflab import LATENT_CHANNELS, LATENT_SIZE
from kflab.codec import FrameCodec, load_codec, psnr, save_codec, train_codec
from kflab.diffusion import SIGMA_DATA


@torch.no_grad()
def test_shapes_and_range():
    codec = FrameCodec()
    x = torch.rand(2, 3, 64, 64, generator=torch.Generator().manual_seed(0))
    z = codec.encode(x)
    assert z.shape == (2, LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE)
    y = codec.decode(z)
    assert y.shape == (2, 3, 64, 64)
    assert float(y.min()) >= 0.0 and float(y.max()) <= 1.0
    # single-frame convenience path matches the batched one
    z1 = codec.encode(x[0])
    assert z1.shape == (LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE)
    assert torch.allclose(z1, z[0], atol=1e-6)
    with pytest.raises(ValueError):
        codec.encode(torch.rand(3, 62, 64))
    with pytest.raises(ValueError):
        codec.decode(torch.rand(2, LATENT_CHANNELS + 1, 16, 16))


def test_trained_codec_reconstructs(codec, index):
    cid = index.entries("train")[0]["id"]
    frames = torch.from_numpy(np.stack([index.load_frame(cid, i) for i in range(8)]))
    with torch.no_grad():
        trained = psnr(codec(frames), frames)
        fresh = psnr(FrameCodec()(frames), frames)
    assert trained > fresh + 3.0
    assert trained > 18.0


def test_latent_scale_calibration(codec, index):
    # training fits codec.scale so dataset latents land near sigma_data
    cid = index.entries("train")[1]["id"]
    frames = torch.from_numpy(np.stack([index.load_frame(cid, i) for i in range(16)]))
    with torch.no_grad():
        z = codec.encode(frames)
    assert abs(float(z.std()) - SIGMA_DATA) < 0.2
    assert codec.scale != 1.0


def test_training_reduces_loss(index):
    cid = index.entries("train")[0]["id"]
    frames = [torch.from_numpy(index.load_frame(cid, i)) for i in range(20)]
    _, history = train_codec(lambda i: frames[i % 20], 20, steps=40, batch=8,
                             seed=1, log_every=1)
    assert [s for s, _ in history] == list(range(1, 41))
    first = np.mean([l for _, l in history[:8]])
    last = np.mean([l for _, l in history[-8:]])
    assert last < first


def test_save_load_roundtrip(tmp_path, codec):
    path = tmp_path / "codec.pt"
    save_codec(codec, path)
    back = load_codec(path)
    assert back.scale == codec.scale
    x = torch.rand(2, 3, 64, 64, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        assert torch.equal(back.encode(x), codec.encode(x))
        assert torch.equal(back(x), codec(x))
