"""Toy latent-video denoiser F_theta: flat residual CNN + attention stack.

One architecture instantiated twice: the keyframe model conditions on an
identity latent (2C input channels) and the interpolation / autoregressive
models condition on a masked frame window (2C+1 channels). Spatial blocks run
per frame; temporal self-attention mixes frames at each spatial location;
audio enters through per-frame cross-attention and/or a timestep-embedding
shift, each behind its own ablation switch.

At 16x16 latents a multi-scale U-Net buys little, and the flat stack keeps
finite-difference gradient checks fast. All residual branches end zero-init,
so a fresh net computes F = 0 and the preconditioned denoiser starts at
c_skip * x.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import AUDIO_DIM, LATENT_CHANNELS
from .checkpoint import DENOISER_MAGIC, load_checkpoint, load_module, save_module
from .conditioning import (
    audio_shift_timesteps,
    build_keyframe_input,
    build_left_window,
    build_interp_input,
    concat_window_input,
    emotion_embedding,
    timestep_embedding,
)

ATTN_DIM = 32
FUSED_AUDIO_DIM = 2 * AUDIO_DIM


@dataclass
class DenoiserConfig:
    in_channels: int
    base_width: int = 64
    n_blocks: int = 4
    temporal_attention: bool = True
    audio_cross_attention: bool = True
    audio_timestep_shift: bool = True
    embed_dim: int = 64

    def __post_init__(self):
        if min(self.in_channels, self.base_width, self.embed_dim) <= 0:
            raise ValueError("widths must be positive")
        if self.n_blocks < 2:
            raise ValueError("attention placement alternates; need n_blocks >= 2")
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even")


def _zero_init(layer):
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


class ResidualBlock(nn.Module):
    """GroupNorm + additive embedding, two 3x3 convs, zero-init residual."""

    def __init__(self, width: int, embed_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, width)
        self.emb = nn.Linear(embed_dim, width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.norm2 = nn.GroupNorm(8, width)
        self.conv2 = _zero_init(nn.Conv2d(width, width, 3, padding=1))

    def forward(self, x, emb):
        h = self.norm1(x) + self.emb(emb)[..., None, None]
        h = self.conv1(F.silu(h))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class TemporalAttention(nn.Module):
    """Single-head self-attention over the frame axis per spatial location."""

    def __init__(self, width: int, inner: int = ATTN_DIM):
        super().__init__()
        self.norm = nn.GroupNorm(8, width)
        self.q = nn.Linear(width, inner)
        self.k = nn.Linear(width, inner)
        self.v = nn.Linear(width, inner)
        self.out = _zero_init(nn.Linear(inner, width))
        self.scale = 1.0 / math.sqrt(inner)

    def forward(self, x, b: int, l: int):
        # x: [B*L, width, h, w] -> tokens [B*h*w, L, width]
        _, c, hh, ww = x.shape
        h = self.norm(x).reshape(b, l, c, hh * ww)
        h = h.permute(0, 3, 1, 2).reshape(b * hh * ww, l, c)
        attn = torch.softmax(self.q(h) @ self.k(h).transpose(-2, -1) * self.scale, dim=-1)
        o = self.out(attn @ self.v(h))
        o = o.reshape(b, hh * ww, l, c).permute(0, 2, 3, 1).reshape(b * l, c, hh, ww)
        return x + o


class AudioCrossAttention(nn.Module):
    """Queries are spatial features; key/value is the frame's audio vector."""

    def __init__(self, width: int, audio_dim: int = FUSED_AUDIO_DIM, inner: int = ATTN_DIM):
        super().__init__()
        self.norm = nn.GroupNorm(8, width)
        self.q = nn.Linear(width, inner)
        self.k = nn.Linear(audio_dim, inner)
        self.v = nn.Linear(audio_dim, inner)
        self.out = _zero_init(nn.Linear(inner, width))
        self.scale = 1.0 / math.sqrt(inner)

    def forward(self, x, audio):
        # x: [B*L, width, h, w]; audio: [B*L, audio_dim]
        bl, c, hh, ww = x.shape
        h = self.norm(x).reshape(bl, c, hh * ww).transpose(1, 2)
        q = self.q(h)
        k = self.k(audio).unsqueeze(1)
        v = self.v(audio).unsqueeze(1)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        o = self.out(attn @ v).transpose(1, 2).reshape(bl, c, hh, ww)
        return x + o


class DenoiserNet(nn.Module):
    """forward(x_in, t_emb, audio) -> residual prediction [C, L, h, w].

    Audio cross-attention sits on even-indexed blocks, temporal attention on
    odd-indexed ones. Accepts an optional leading batch axis on all inputs.
    """

    def __init__(self, cfg: DenoiserConfig, out_channels: int = LATENT_CHANNELS):
        super().__init__()
        self.cfg = cfg
        self.out_channels = out_channels
        w = cfg.base_width
        self.stem = nn.Conv2d(cfg.in_channels, w, 3, padding=1)
        self.trunk = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.embed_dim), nn.SiLU(),
            nn.Linear(cfg.embed_dim, cfg.embed_dim),
        )
        if cfg.audio_timestep_shift:
            self.shift_mlp = nn.Sequential(
                nn.Linear(FUSED_AUDIO_DIM, cfg.embed_dim), nn.SiLU(),
                _zero_init(nn.Linear(cfg.embed_dim, cfg.embed_dim)),
            )
        self.blocks = nn.ModuleList(ResidualBlock(w, cfg.embed_dim) for _ in range(cfg.n_blocks))
        self.temporal = nn.ModuleList(
            TemporalAttention(w) if cfg.temporal_attention and i % 2 == 1 else None
            for i in range(cfg.n_blocks))
        self.audio_attn = nn.ModuleList(
            AudioCrossAttention(w) if cfg.audio_cross_attention and i % 2 == 0 else None
            for i in range(cfg.n_blocks))
        self.head_norm = nn.GroupNorm(8, w)
        self.head = _zero_init(nn.Conv2d(w, out_channels, 3, padding=1))

    def forward(self, x_in: torch.Tensor, t_emb: torch.Tensor, audio: torch.Tensor) -> torch.Tensor:
        batched = x_in.ndim == 5
        x = x_in if batched else x_in.unsqueeze(0)
        t = t_emb if t_emb.ndim == 3 else t_emb.unsqueeze(0)
        a = audio if audio.ndim == 3 else audio.unsqueeze(0)
        b, c, l, hh, ww = x.shape
        if c != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {c}")
        if t.shape != (b, l, self.cfg.embed_dim):
            raise ValueError(f"bad t_emb shape {tuple(t_emb.shape)}")
        if a.shape != (b, l, FUSED_AUDIO_DIM):
            raise ValueError(f"bad audio shape {tuple(audio.shape)}")
        if self.cfg.audio_timestep_shift:
            t = audio_shift_timesteps(t, a, self.shift_mlp)
        emb = self.trunk(t).reshape(b * l, -1)
        a_flat = a.reshape(b * l, -1)
        h = self.stem(x.transpose(1, 2).reshape(b * l, c, hh, ww))
        for block, t_attn, a_attn in zip(self.blocks, self.temporal, self.audio_attn):
            h = block(h, emb)
            if t_attn is not None:
                h = t_attn(h, b, l)
            if a_attn is not None:
                h = a_attn(h, a_flat)
        out = self.head(F.silu(self.head_norm(h)))
        out = out.reshape(b, l, self.out_channels, hh, ww).transpose(1, 2)
        return out if batched else out.squeeze(0)


class ConditionedDenoiser(nn.Module):
    """Assembles net inputs from a ConditionBundle; the `net` argument of
    diffusion.denoise.

    kind "keyframe": channels [z || id], emotion embeddings added to the
    timestep track. kind "interp": endpoint window (cond.endpoints is the
    (z_s, z_e) pair). kind "ar": left-only window, cond.endpoints holds the
    already-generated frames. Window kinds own the learned per-channel
    placeholder latent filling unobserved slots.
    """

    def __init__(self, kind: str, cfg: DenoiserConfig | None = None,
                 out_channels: int = LATENT_CHANNELS):
        super().__init__()
        if kind not in ("keyframe", "interp", "ar"):
            raise ValueError(f"unknown denoiser kind {kind!r}")
        want = 2 * out_channels if kind == "keyframe" else 2 * out_channels + 1
        if cfg is None:
            cfg = DenoiserConfig(in_channels=want)
        if cfg.in_channels != want:
            raise ValueError(f"{kind} model needs in_channels={want}")
        self.kind = kind
        self.net = DenoiserNet(cfg, out_channels)
        if kind != "keyframe":
            self.slot_fill = nn.Parameter(torch.zeros(out_channels))

    @property
    def cfg(self) -> DenoiserConfig:
        return self.net.cfg

    def forward(self, x_scaled: torch.Tensor, c_noise, cond) -> torch.Tensor:
        batched = x_scaled.ndim == 5
        l = x_scaled.shape[-3]
        dim = self.cfg.embed_dim
        prefix = (x_scaled.shape[0], l, dim) if batched else (l, dim)
        t = torch.zeros(prefix, dtype=x_scaled.dtype)
        t = t + _per_frame(timestep_embedding(c_noise, dim), t.ndim)
        audio = torch.zeros_like(cond.audio) if cond.drop_audio else cond.audio
        if audio.shape[-2] != l:
            raise ValueError("audio rows do not match the frame count")
        if self.kind == "keyframe":
            if cond.valence is not None:
                e_v, e_a = emotion_embedding(cond.valence, cond.arousal, dim)
                t = t + _per_frame(e_v, t.ndim) + _per_frame(e_a, t.ndim)
            x_in = build_keyframe_input(x_scaled, cond.id_latent, cond.drop_id)
        elif self.kind == "interp":
            z_s, z_e = cond.endpoints
            x_in = build_interp_input(x_scaled, z_s, z_e, self.slot_fill)
        else:
            win = build_left_window(list(cond.endpoints), self.slot_fill, l)
            x_in = concat_window_input(x_scaled, win)
        return self.net(x_in, t, audio)


def _per_frame(e: torch.Tensor, target_ndim: int) -> torch.Tensor:
    """Insert the frame axis when an embedding is per-sample, not per-frame."""
    if e.ndim == target_ndim - 1:
        return e.unsqueeze(-2)
    return e


def save_denoiser(model: ConditionedDenoiser, path) -> None:
    config = {"kind": model.kind, "out_channels": model.net.out_channels,
              **asdict(model.cfg)}
    save_module(path, DENOISER_MAGIC, config, model)


def load_denoiser(path) -> ConditionedDenoiser:
    _, config, _ = load_checkpoint(path, expect_magic=DENOISER_MAGIC)
    kind = config.pop("kind")
    out_channels = config.pop("out_channels")
    model = ConditionedDenoiser(kind, DenoiserConfig(**config), out_channels)
    load_module(path, DENOISER_MAGIC, model)
    model.eval()
    return model


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
