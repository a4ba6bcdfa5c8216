"""Training loops: composite loss with lower-half weighting, condition
dropout, and the stage drivers (keyframe, interpolation, reduced guidance
model, autoregressive baseline).

The composite loss follows

    L = lambda_tot * ( L2_latent(z0, z_gt) + L2_pixel(x0, x_gt) + L_p(x0, x_gt) )

where lambda_tot = lambda(sigma) * W and W is a spatial map equal to
lambda_lower on the lower half of the face and 1 elsewhere. The pixel and
perceptual terms touch exactly one uniformly random frame per sample; only
that frame is decoded. The perceptual distance uses a frozen seed-pinned
random conv feature extractor instead of a pretrained VGG, the one intentional
substitution inside the loss.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import KEYFRAMES_PER_SEGMENT, GAP_FRAMES, LATENT_CHANNELS
from .conditioning import ConditionBundle, fuse_audio
from .denoiser import ConditionedDenoiser, DenoiserConfig, save_denoiser
from .diffusion import denoise, loss_weight, sample_training_sigma

STAGES = ("keyframe", "interpolation", "reduced", "ar")
PIXEL_LOSSES = ("none", "l1", "l2", "l2+perceptual", "l1+perceptual")
PERCEPTUAL_SEED = 90210
AR_OVERLAP = 2

# appendix-scale presets kept for reference; desk defaults below train the
# same architecture in hours on one core
PAPER_SCALE = {"lr": 1e-5, "batch_size": 32, "keyframe_steps": 60_000,
               "interpolation_steps": 120_000}


@dataclass
class TrainConfig:
    stage: str
    steps: int
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 1000
    drop_audio_p: float = 0.2
    drop_id_p: float = 0.1
    lambda_lower: float = 3.0
    pixel_loss: str = "l2+perceptual"
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.pixel_loss not in PIXEL_LOSSES:
            raise ValueError(f"pixel_loss must be one of {PIXEL_LOSSES}")
        if self.steps < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("steps/batch_size/warmup_steps out of range")
        for p in (self.drop_audio_p, self.drop_id_p):
            if not 0.0 <= p <= 1.0:
                raise ValueError("drop probabilities must lie in [0, 1]")
        if self.lambda_lower < 1.0:
            raise ValueError("lambda_lower must be >= 1")


_FIELD_TYPES = {"stage": str, "steps": int, "batch_size": int, "lr": float,
                "warmup_steps": int, "drop_audio_p": float, "drop_id_p": float,
                "lambda_lower": float, "pixel_loss": str, "seed": int}


def parse_train_config(path) -> TrainConfig:
    """Flat `key = value` text file; # starts a comment; stage and steps
    are required, everything else falls back to the defaults."""
    fields = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        fields[key] = _FIELD_TYPES[key](val)
    if "stage" not in fields or "steps" not in fields:
        raise ValueError("config must set stage and steps")
    return TrainConfig(**fields)


def format_train_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {getattr(cfg, k)}\n" for k in _FIELD_TYPES)


def lower_half_weights(h: int, w: int, lambda_lower: float) -> torch.Tensor:
    """1 on top rows, lambda_lower on rows >= h/2 (the mouth region)."""
    m = torch.ones(h, w)
    m[h // 2:] = lambda_lower
    return m


class PerceptualNet(nn.Module):
    """Fixed random 3-layer strided conv feature extractor, weights frozen."""

    def __init__(self, seed: int = PERCEPTUAL_SEED):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
        ])
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.weight[0].numel()
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g)
                                  * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def features(self, x: torch.Tensor) -> list:
        feats = []
        h = x
        for conv in self.convs:
            # follow the input dtype so float64 gradient checks stay exact
            h = F.silu(F.conv2d(h, conv.weight.to(h.dtype), conv.bias.to(h.dtype),
                                stride=2, padding=1))
            feats.append(h)
        return feats


@lru_cache(maxsize=1)
def _perceptual_net() -> PerceptualNet:
    return PerceptualNet()


def _perceptual_per_sample(x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
    net = _perceptual_net()
    fa, fb = net.features(x_a), net.features(x_b)
    terms = [(a - b).square().mean(dim=(1, 2, 3)) for a, b in zip(fa, fb)]
    return torch.stack(terms).mean(dim=0)


def perceptual_loss(x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
    """Feature-space L2, averaged over the extractor's layers."""
    if x_a.shape != x_b.shape:
        raise ValueError("shape mismatch")
    a = x_a.unsqueeze(0) if x_a.ndim == 3 else x_a
    b = x_b.unsqueeze(0) if x_b.ndim == 3 else x_b
    return _perceptual_per_sample(a, b).mean()


def composite_loss(z0_pred: torch.Tensor, z_gt: torch.Tensor, decode_fn, x_gt,
                   sigma, lambda_lower: float, rng: torch.Generator,
                   pixel_loss: str = "l2+perceptual") -> torch.Tensor:
    """Latent L2 over all frames plus pixel terms on one random frame.

    x_gt is either a tensor of ground-truth pixels aligned with the latent
    frames ([3, T, H, W], batched with a leading axis) or a callable
    (sample_idx, frame_idx) -> [3, H, W] so the trainer only loads the frame
    the draw selects. Every term carries lambda(sigma) and the lower-half map;
    the perceptual term, having no pixel alignment, is scaled by the map's
    scalar mean.
    """
    if pixel_loss not in PIXEL_LOSSES:
        raise ValueError(f"pixel_loss must be one of {PIXEL_LOSSES}")
    if z0_pred.shape != z_gt.shape:
        raise ValueError("latent shape mismatch")
    batched = z0_pred.ndim == 5
    zp = z0_pred if batched else z0_pred.unsqueeze(0)
    zg = z_gt if batched else z_gt.unsqueeze(0)
    b, _, t, h, w = zp.shape
    lam = loss_weight(torch.as_tensor(sigma, dtype=zp.dtype))
    lam = lam.expand(b) if lam.ndim == 0 else lam.reshape(b)

    w_lat = lower_half_weights(h, w, lambda_lower).to(zp.dtype)
    total = (w_lat * (zp - zg).square()).mean(dim=(1, 2, 3, 4))

    if pixel_loss != "none":
        j = torch.randint(0, t, (b,), generator=rng)
        z_sel = zp[torch.arange(b), :, j]
        x0 = decode_fn(z_sel)
        x_ref = _select_frames(x_gt, j, batched, x0)
        hp, wp = x0.shape[-2], x0.shape[-1]
        w_pix = lower_half_weights(hp, wp, lambda_lower).to(x0.dtype)
        diff = x0 - x_ref
        err = diff.abs() if pixel_loss.startswith("l1") else diff.square()
        total = total + (w_pix * err).mean(dim=(1, 2, 3))
        if pixel_loss.endswith("perceptual"):
            total = total + w_pix.mean() * _perceptual_per_sample(x0, x_ref)
    return (lam * total).mean()


def _select_frames(x_gt, j, batched, like):
    if callable(x_gt):
        rows = [x_gt(i, int(j[i])) for i in range(len(j))]
        return torch.stack([torch.as_tensor(r, dtype=like.dtype) for r in rows])
    x = x_gt if batched else x_gt.unsqueeze(0)
    if x.ndim != 5:
        raise ValueError("x_gt must be [.., 3, T, H, W] or a callable")
    return x[torch.arange(len(j)), :, j]


def sample_condition_drops(g: torch.Generator, n: int, p: float) -> torch.Tensor:
    """Per-sample Bernoulli dropout mask."""
    return torch.rand(n, generator=g) < p


def codec_fingerprint(codec) -> str:
    h = hashlib.sha256()
    h.update(repr(codec.scale).encode())
    for name, t in sorted(codec.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()[:8]


class LatentStore:
    """Per-clip encoded latents, cached on disk keyed by the codec weights.

    Latents come back as [L, C, h, w] float32 tensors; everything a training
    step touches afterwards is RAM-resident.
    """

    def __init__(self, index, codec, cache_dir=None):
        self.index = index
        self.codec = codec
        root = Path(cache_dir) if cache_dir else index.root / "latent_cache"
        self.dir = root / codec_fingerprint(codec)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._ram = {}

    @torch.no_grad()
    def latents(self, clip_id: str) -> torch.Tensor:
        if clip_id in self._ram:
            return self._ram[clip_id]
        path = self.dir / f"{clip_id}.npy"
        if path.exists():
            z = torch.from_numpy(np.load(path))
        else:
            frames = torch.from_numpy(self.index.load_frames(clip_id))
            chunks = [self.codec.encode(frames[i:i + 64])
                      for i in range(0, len(frames), 64)]
            z = torch.cat(chunks)
            np.save(path, z.numpy())
        self._ram[clip_id] = z
        return z


class _ClipCache:
    """Audio rows (fused) and label tracks per clip, loaded once."""

    def __init__(self, index):
        self.index = index
        self._audio, self._labels = {}, {}

    def audio(self, clip_id: str) -> torch.Tensor:
        if clip_id not in self._audio:
            a_w, a_b = self.index.load_audio(clip_id)
            self._audio[clip_id] = fuse_audio(torch.from_numpy(a_w),
                                              torch.from_numpy(a_b))
        return self._audio[clip_id]

    def labels(self, clip_id: str) -> dict:
        if clip_id not in self._labels:
            self._labels[clip_id] = self.index.load_labels(clip_id)
        return self._labels[clip_id]


def _stage_kind(stage: str) -> str:
    return {"keyframe": "keyframe", "interpolation": "interp",
            "reduced": "interp", "ar": "ar"}[stage]


def train_stage(config: TrainConfig, index, codec, split: str = "train",
                ckpt_path=None, log_path=None, checkpoint_every: int = 500,
                log_cb=None, arch: dict | None = None):
    """Run one stage; returns (model, history of (step, loss, lr, sigma_mean)).

    Keyframe batches take every (S+1)-th frame of a clip with a random
    identity frame from the same clip and emotion tracks at the keyframe
    positions; interpolation/reduced batches take contiguous (S+2)-frame
    windows with clean endpoints; the autoregressive stage conditions on the
    leading AR_OVERLAP frames instead. A non-finite loss aborts.

    `arch` holds DenoiserConfig overrides (ablation variants such as
    audio_cross_attention=False); in_channels stays stage-derived.
    """
    kind = _stage_kind(config.stage)
    torch.manual_seed(config.seed)
    cfg = None
    if arch:
        want = 2 * LATENT_CHANNELS if kind == "keyframe" else 2 * LATENT_CHANNELS + 1
        cfg = DenoiserConfig(in_channels=want, **arch)
    model = ConditionedDenoiser(kind, cfg)
    history = []
    if config.steps == 0:
        if ckpt_path:
            save_denoiser(model, ckpt_path)
        return model, history

    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    store = LatentStore(index, codec)
    cache = _ClipCache(index)
    clips = [c["id"] for c in index.entries(split)]
    if not clips:
        raise ValueError(f"no clips in split {split!r}")
    span = (KEYFRAMES_PER_SEGMENT - 1) * (GAP_FRAMES + 1) + 1
    window = GAP_FRAMES + 2
    need = span if kind == "keyframe" else window
    for cid in clips:
        if index.by_id[cid]["n_frames"] < need:
            raise ValueError(f"clip {cid} shorter than {need} frames")

    g = torch.Generator().manual_seed(config.seed + 1)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr,
                            betas=(0.9, 0.999), weight_decay=0.01)
    log_file = None
    if log_path:
        log_file = open(log_path, "a", newline="")
        log = csv.writer(log_file)
        if log_file.tell() == 0:
            log.writerow(["step", "loss", "lr", "sigma_mean"])

    b = config.batch_size
    stride = GAP_FRAMES + 1
    try:
        for step in range(config.steps):
            lr = config.lr * min(1.0, (step + 1) / max(config.warmup_steps, 1))
            for group in opt.param_groups:
                group["lr"] = lr

            zs, auds, frame_ids, clip_ids = [], [], [], []
            ids, valence, arousal = [], [], []
            for i in torch.randint(0, len(clips), (b,), generator=g):
                cid = clips[int(i)]
                lat = store.latents(cid)
                n = lat.shape[0]
                if kind == "keyframe":
                    start = int(torch.randint(0, n - span + 1, (1,), generator=g))
                    rows = start + stride * torch.arange(KEYFRAMES_PER_SEGMENT)
                    lab = cache.labels(cid)
                    valence.append(torch.from_numpy(lab["valence"])[rows])
                    arousal.append(torch.from_numpy(lab["arousal"])[rows])
                    id_row = int(torch.randint(0, n, (1,), generator=g))
                    ids.append(lat[id_row])
                else:
                    start = int(torch.randint(0, n - window + 1, (1,), generator=g))
                    rows = start + torch.arange(window)
                zs.append(lat[rows].transpose(0, 1))
                auds.append(cache.audio(cid)[rows])
                frame_ids.append(rows)
                clip_ids.append(cid)

            z_gt = torch.stack(zs)
            audio = torch.stack(auds)
            drop_a = sample_condition_drops(g, b, config.drop_audio_p)
            audio = audio * (~drop_a).reshape(b, 1, 1)
            if kind == "keyframe":
                id_lat = torch.stack(ids)
                drop_i = sample_condition_drops(g, b, config.drop_id_p)
                id_lat = id_lat * (~drop_i).reshape(b, 1, 1, 1)
                cond = ConditionBundle(audio=audio, id_latent=id_lat,
                                       valence=torch.stack(valence).clamp(-1, 1),
                                       arousal=torch.stack(arousal).clamp(-1, 1))
            elif kind == "interp":
                cond = ConditionBundle(audio=audio,
                                       endpoints=(z_gt[:, :, 0], z_gt[:, :, -1]))
            else:
                left = tuple(z_gt[:, :, k] for k in range(AR_OVERLAP))
                cond = ConditionBundle(audio=audio, endpoints=left)

            sigma = sample_training_sigma(b, g)
            noise = torch.randn(z_gt.shape, generator=g)
            x_noised = z_gt + sigma.reshape(b, 1, 1, 1, 1) * noise
            z0_pred = denoise(model, x_noised, sigma, cond)

            def pixel_row(sample: int, frame: int):
                cid = clip_ids[sample]
                return torch.from_numpy(
                    index.load_frame(cid, int(frame_ids[sample][frame])))

            loss = composite_loss(z0_pred, z_gt, codec.decode, pixel_row,
                                  sigma, config.lambda_lower, g,
                                  pixel_loss=config.pixel_loss)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"loss diverged at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()

            row = (step + 1, float(loss.detach()), lr, float(sigma.mean()))
            history.append(row)
            if log_file:
                log.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.3e}", f"{row[3]:.4f}"])
            if log_cb and (step + 1) % 100 == 0:
                log_cb(*row)
            if ckpt_path and (step + 1) % checkpoint_every == 0:
                save_denoiser(model, ckpt_path)
        if ckpt_path:
            save_denoiser(model, ckpt_path)
    finally:
        if log_file:
            log_file.close()
    model.eval()
    return model, history


def train_reduced(main_config: TrainConfig, index, codec, **kwargs):
    """Autoguidance companion: same architecture and data order, steps/16."""
    cfg = replace(main_config, stage="reduced", steps=main_config.steps // 16)
    return train_stage(cfg, index, codec, **kwargs)
