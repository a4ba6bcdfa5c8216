"""Frame autoencoder: 64x64 RGB <-> 4x16x16 latents (downsample factor 4).

Plain reconstruction autoencoder, no KL term. After training, latents are
divided by a stored global scale so their std matches the diffusion
preconditioner's sigma_data; the scale lives in the checkpoint and encode and
decode apply it transparently. The decoder stays frozen during diffusion
training but remains differentiable so pixel losses can flow through it.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import FRAME_SIZE, LATENT_CHANNELS
from .checkpoint import CODEC_MAGIC, load_module, save_module
from .diffusion import SIGMA_DATA

DOWNSAMPLE = 4


class FrameCodec(nn.Module):
    def __init__(self, channels: int = LATENT_CHANNELS, base: int = 32, scale: float = 1.0):
        super().__init__()
        self.channels = channels
        self.base = base
        self.scale = scale
        self.encoder = nn.Sequential(
            nn.Conv2d(3, base, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(base, base * 2, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(base * 2, base * 2, 3, padding=1), nn.SiLU(),
            nn.Conv2d(base * 2, channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(channels, base * 2, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(base * 2, base, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(base, base, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(base, 3, 3, padding=1),
        )

    @property
    def config(self) -> dict:
        return {"channels": self.channels, "base": self.base, "scale": self.scale,
                "downsample": DOWNSAMPLE}

    def encode(self, frame: torch.Tensor) -> torch.Tensor:
        """[3, H, W] or [B, 3, H, W] -> latents at H/4 x W/4, scale applied."""
        if frame.shape[-1] % DOWNSAMPLE or frame.shape[-2] % DOWNSAMPLE:
            raise ValueError(f"frame dims must be divisible by {DOWNSAMPLE}")
        single = frame.ndim == 3
        x = frame.unsqueeze(0) if single else frame
        z = self.encoder(x) / self.scale
        return z.squeeze(0) if single else z

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """Latents -> frames in [0, 1]; differentiable w.r.t. the latent."""
        if latent.shape[-3] != self.channels:
            raise ValueError(f"expected {self.channels} latent channels")
        single = latent.ndim == 3
        z = latent.unsqueeze(0) if single else latent
        x = torch.sigmoid(self.decoder(z * self.scale)).clamp(0.0, 1.0)
        return x.squeeze(0) if single else x

    def forward(self, frame):
        return self.decode(self.encode(frame))


def save_codec(codec: FrameCodec, path) -> None:
    save_module(path, CODEC_MAGIC, codec.config, codec)


def load_codec(path) -> FrameCodec:
    from .checkpoint import load_checkpoint

    _, config, _ = load_checkpoint(path, expect_magic=CODEC_MAGIC)
    codec = FrameCodec(channels=config["channels"], base=config["base"],
                       scale=config["scale"])
    load_module(path, CODEC_MAGIC, codec)
    codec.eval()
    return codec


def train_codec(frame_provider, n_frames: int, steps: int, lr: float = 2e-3,
                batch: int = 32, seed: int = 0, log_every: int = 100,
                log_cb=None) -> tuple:
    """Train from scratch; returns (codec, loss history).

    `frame_provider(i)` yields frame i as a [3, H, W] float tensor; steps=0
    returns the seeded initialization unchanged (scale stays 1.0).
    """
    if n_frames < 1:
        raise ValueError("empty dataset")
    torch.manual_seed(seed)
    codec = FrameCodec()
    history = []
    if steps == 0:
        return codec, history
    g = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    for step in range(steps):
        idx = torch.randint(0, n_frames, (batch,), generator=g)
        x = torch.stack([frame_provider(int(i)) for i in idx])
        x_hat = codec.decode(codec.encode(x))
        loss = F.mse_loss(x_hat, x)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"codec loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % log_every == 0 or step == steps - 1:
            val = float(loss.detach())
            history.append((step + 1, val))
            if log_cb:
                log_cb(step + 1, val)
    codec.eval()
    _fit_latent_scale(codec, frame_provider, n_frames, g)
    return codec, history


@torch.no_grad()
def _fit_latent_scale(codec: FrameCodec, frame_provider, n_frames: int, g,
                      sample: int = 256) -> None:
    """Store the global factor mapping raw latent std to sigma_data."""
    idx = torch.randint(0, n_frames, (min(sample, n_frames),), generator=g)
    x = torch.stack([frame_provider(int(i)) for i in idx])
    raw = codec.encoder(x)
    codec.scale = float(raw.std() / SIGMA_DATA)


@torch.no_grad()
def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    mse = F.mse_loss(a, b).clamp_min(1e-12)
    return float(10.0 * torch.log10(1.0 / mse))
