"""Conditioning signal construction for both diffusion stages.

The keyframe stage consumes: fused audio rows, audio-shifted timestep
embeddings, valence/arousal embeddings and a repeated identity latent
concatenated on channels. The interpolation stage consumes: fused audio rows,
audio-shifted timestep embeddings and a masked endpoint window (start latent,
learned placeholder z_m for the interior, end latent, plus a binary mask
channel). All builders are pure; dropout is expressed by zeroing features so
the network stays branch-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

EMB_BASE = 10_000.0

# Fixed (valence, arousal) anchors for the discrete 7-class adapter used as
# the emotion-conditioning baseline. Continuous conditioning is the default.
EMOTION_ANCHORS = {
    "neutral": (0.0, 0.0),
    "happy": (0.75, 0.35),
    "surprise": (0.35, 0.85),
    "angry": (-0.70, 0.65),
    "fear": (-0.40, 0.90),
    "disgust": (-0.75, 0.10),
    "sad": (-0.70, -0.50),
}

# Arousal positions are offset so that E_v + E_a is not symmetric under
# swapping the two scalars (the sum is the only thing the network sees).
_AROUSAL_OFFSET = 1000.0


@dataclass
class ConditionBundle:
    """Per-sample conditioning for one denoiser call.

    Exactly one of id_latent (keyframe stage) or endpoints (interpolation
    stage) must be present. audio rows are the fused [L, 2*C_a] features.
    """

    audio: torch.Tensor
    id_latent: torch.Tensor | None = None
    valence: torch.Tensor | None = None
    arousal: torch.Tensor | None = None
    endpoints: tuple | None = None
    drop_audio: bool = False
    drop_id: bool = False

    def __post_init__(self):
        if (self.id_latent is None) == (self.endpoints is None):
            raise ValueError("exactly one of id_latent / endpoints must be set")
        if (self.valence is None) != (self.arousal is None):
            raise ValueError("valence and arousal must be set together")
        if self.endpoints is not None and self.valence is not None:
            raise ValueError("emotion conditioning is keyframe-stage only")


@dataclass
class MaskedWindow:
    frames: torch.Tensor  # [C, N, h, w] (or batched [B, C, N, h, w])
    mask: torch.Tensor    # [N, 1, h, w] (or batched [B, N, 1, h, w])


def fuse_audio(a_w: torch.Tensor, a_b: torch.Tensor) -> torch.Tensor:
    """Concat the two per-frame streams, w-stream first: [L, 2*C_a]."""
    if a_w.shape != a_b.shape:
        raise ValueError(f"audio stream shapes differ: {tuple(a_w.shape)} vs {tuple(a_b.shape)}")
    return torch.cat([a_w, a_b], dim=-1)


def split_audio(a_wb: torch.Tensor):
    c = a_wb.shape[-1] // 2
    return a_wb[..., :c], a_wb[..., c:]


def timestep_embedding(pos, dim: int, base: float = EMB_BASE) -> torch.Tensor:
    """Sinusoidal embedding of a position, interleaved sin/cos.

    For diffusion timesteps the caller passes c_noise(sigma); emotion
    embeddings pass an affine-rescaled scalar. Position 0 gives the
    characteristic sin=0 / cos=1 pattern.
    """
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    pos = torch.as_tensor(pos, dtype=torch.float32)
    half = dim // 2
    if half == 1:
        freqs = torch.ones(1)
    else:
        freqs = torch.exp(-math.log(base) * torch.arange(half, dtype=torch.float32) / (half - 1))
    angles = pos.unsqueeze(-1) * freqs
    out = torch.empty(pos.shape + (dim,), dtype=torch.float32)
    out[..., 0::2] = torch.sin(angles)
    out[..., 1::2] = torch.cos(angles)
    return out


def audio_shift_timesteps(t_emb: torch.Tensor, a_wb: torch.Tensor, mlp) -> torch.Tensor:
    """Per-frame shifted embeddings: t'[l] = t_emb + mlp(a_wb[l]).

    t_emb is [dim] (one noise level for the whole window) or [L, dim].
    Audio dropout is the caller's job: pass zeroed rows.
    """
    shift = mlp(a_wb)
    if shift.shape[-1] != t_emb.shape[-1]:
        raise ValueError("mlp output dim must match embedding dim")
    return t_emb.unsqueeze(-2) + shift if t_emb.ndim == shift.ndim - 1 else t_emb + shift


def emotion_embedding(valence, arousal, dim: int):
    """Sinusoidal (E_v, E_a) for scalars or per-frame [L] tracks in [-1, 1].

    Valence maps to positions [0, 1000]; arousal to [1000, 2000]. The offset
    keeps the summed pair injective in (v, a) — with a shared map the sum
    would be unchanged by swapping the two scalars.
    """
    v = torch.as_tensor(valence, dtype=torch.float32)
    a = torch.as_tensor(arousal, dtype=torch.float32)
    for name, x in (("valence", v), ("arousal", a)):
        if torch.any(x < -1.0) or torch.any(x > 1.0):
            raise ValueError(f"{name} outside [-1, 1]")
    e_v = timestep_embedding(1000.0 * (v + 1.0) / 2.0, dim)
    e_a = timestep_embedding(1000.0 * (a + 1.0) / 2.0 + _AROUSAL_OFFSET, dim)
    return e_v, e_a


def discrete_emotion_adapter(label: str):
    """Map a discrete emotion class to its fixed (valence, arousal) anchor."""
    if label not in EMOTION_ANCHORS:
        raise KeyError(f"unknown emotion class {label!r}")
    return EMOTION_ANCHORS[label]


def nearest_anchor(valence: float, arousal: float):
    """Quantize a continuous (v, a) point to the nearest discrete anchor."""
    return min(
        EMOTION_ANCHORS,
        key=lambda k: (EMOTION_ANCHORS[k][0] - valence) ** 2 + (EMOTION_ANCHORS[k][1] - arousal) ** 2,
    )


def build_keyframe_input(z_noised: torch.Tensor, id_latent: torch.Tensor,
                         drop_id: bool = False) -> torch.Tensor:
    """[z_noised || id repeated over time] -> 2C channels.

    Accepts [C, T, h, w] with id [C, h, w], or batched [B, C, T, h, w] with
    id [B, C, h, w].
    """
    t_axis = z_noised.ndim - 3
    n_frames = z_noised.shape[t_axis]
    if id_latent.shape[-3:] != (z_noised.shape[-4], z_noised.shape[-2], z_noised.shape[-1]):
        raise ValueError("id_latent shape does not match the latent frames")
    id_block = id_latent.unsqueeze(t_axis).repeat_interleave(n_frames, dim=t_axis)
    if drop_id:
        id_block = torch.zeros_like(id_block)
    return torch.cat([z_noised, id_block], dim=t_axis - 1)


def build_masked_window(z_s: torch.Tensor, z_e: torch.Tensor, z_m_learned: torch.Tensor,
                        n_frames: int) -> MaskedWindow:
    """Endpoint window: [z_s, z_m, ..., z_m, z_e] with mask 1 at both ends."""
    if n_frames < 3:
        raise ValueError("window needs at least 3 frames")
    return _window_from_slots({0: z_s, n_frames - 1: z_e}, z_m_learned, n_frames,
                              like=z_s)


def build_left_window(cond_frames: list, z_m_learned: torch.Tensor,
                      n_frames: int) -> MaskedWindow:
    """Autoregressive variant: clean frames fill the leftmost slots only."""
    if not cond_frames or len(cond_frames) >= n_frames:
        raise ValueError("need 1 <= len(cond_frames) < n_frames")
    return _window_from_slots({i: f for i, f in enumerate(cond_frames)}, z_m_learned,
                              n_frames, like=cond_frames[0])


def _window_from_slots(slots: dict, z_m: torch.Tensor, n_frames: int, like: torch.Tensor):
    """Stack clean frames at the given slot indices, z_m everywhere else.

    `like` is one conditioning frame, [C, h, w] or [B, C, h, w]; z_m is a
    per-channel [C] vector broadcast spatially.
    """
    c, h, w = like.shape[-3], like.shape[-2], like.shape[-1]
    if z_m.shape != (c,):
        raise ValueError(f"z_m must be per-channel [{c}], got {tuple(z_m.shape)}")
    placeholder = z_m.reshape(c, 1, 1).to(like.dtype).expand_as(like)
    t_axis = like.ndim - 2  # frame axis sits between channels and (h, w)
    frames, mask = [], []
    for i in range(n_frames):
        frames.append(slots[i] if i in slots else placeholder)
        mask.append(1.0 if i in slots else 0.0)
    stacked = torch.stack(frames, dim=t_axis)
    m = torch.tensor(mask, dtype=like.dtype).reshape(n_frames, 1, 1, 1)
    m = m.expand(n_frames, 1, h, w)
    if like.ndim == 4:  # batched: [B, N, 1, h, w]
        m = m.unsqueeze(0).expand(like.shape[0], n_frames, 1, h, w)
    return MaskedWindow(frames=stacked, mask=m)


def build_interp_input(z_noised: torch.Tensor, z_s: torch.Tensor, z_e: torch.Tensor,
                       z_m_learned: torch.Tensor) -> torch.Tensor:
    """[z_noised || endpoint window || mask] -> 2C+1 channels over N frames."""
    t_axis = z_noised.ndim - 3
    n_frames = z_noised.shape[t_axis]
    win = build_masked_window(z_s, z_e, z_m_learned, n_frames)
    return concat_window_input(z_noised, win)


def concat_window_input(z_noised: torch.Tensor, win: MaskedWindow) -> torch.Tensor:
    """Channel-concatenate noised latents with any masked window (2C+1 ch)."""
    c_axis = z_noised.ndim - 4
    mask = win.mask.transpose(-4, -3)  # [..., N, 1, h, w] -> [..., 1, N, h, w]
    return torch.cat([z_noised, win.frames, mask], dim=c_axis)
