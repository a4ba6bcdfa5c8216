"""Toy lipreader and the LipScore metric.

The lipreader regresses the ground-truth mouth-aperture track from the lower
half of each frame; the 32-d tanh feature layer, centered by a stored
training-set mean, is the embedding LipScore compares. Centering matters:
uncentered features share a large common component across all mouths, which
would pin every cosine near 1 and bury temporal misalignment.

Training jitters frames with small horizontal shifts and rotations so the
embedding responds to mouth state rather than exact pixel placement.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..checkpoint import LIPREADER_MAGIC, load_checkpoint, load_module, save_module

EMBED_DIM = 32


class Lipreader(nn.Module):
    def __init__(self, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.embed_dim = embed_dim
        self.convs = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 32, 3, padding=1), nn.SiLU(),
        )
        self.fc = nn.Linear(32, embed_dim)
        self.head = nn.Linear(embed_dim, 1)
        self.register_buffer("center", torch.zeros(embed_dim))

    def _features(self, frames: torch.Tensor) -> torch.Tensor:
        # lower-half crop: the mouth region is all the task needs
        h = frames.shape[-2]
        x = frames[..., h // 2:, :]
        z = self.convs(x).mean(dim=(-2, -1))
        return torch.tanh(self.fc(z))

    def embed(self, frames: torch.Tensor) -> torch.Tensor:
        """[L, 3, H, W] -> centered embeddings [L, EMBED_DIM]."""
        return self._features(frames) - self.center

    def predict(self, frames: torch.Tensor) -> torch.Tensor:
        """Mouth-aperture estimate per frame."""
        return self.head(self._features(frames)).squeeze(-1)


def _augment(frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < 0.5:
        frame = scipy.ndimage.shift(frame, (0, 0, rng.uniform(-8, 8)),
                                    order=1, mode="nearest")
    if rng.random() < 0.5:
        frame = scipy.ndimage.rotate(frame, rng.uniform(-20, 20), axes=(-2, -1),
                                     reshape=False, order=1, mode="nearest")
    return frame


def train_lipreader(index, split: str = "train", steps: int = 2500,
                    batch: int = 64, lr: float = 1e-3, seed: int = 0,
                    augment: bool = True, log_cb=None) -> Lipreader:
    torch.manual_seed(seed)
    model = Lipreader()
    clips = [c["id"] for c in index.entries(split)]
    if not clips:
        raise ValueError(f"no clips in split {split!r}")
    rng = np.random.default_rng(seed + 1)
    tracks = {cid: index.load_labels(cid)["mouth_open"] for cid in clips}
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for step in range(steps):
        xs, ys = [], []
        for _ in range(batch):
            cid = clips[int(rng.integers(len(clips)))]
            fi = int(rng.integers(len(tracks[cid])))
            frame = index.load_frame(cid, fi)
            if augment:
                frame = _augment(frame, rng)
            xs.append(torch.from_numpy(np.ascontiguousarray(frame)))
            ys.append(tracks[cid][fi])
        x = torch.stack(xs)
        y = torch.tensor(ys, dtype=torch.float32)
        loss = F.mse_loss(model.predict(x), y)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"lipreader loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_cb and (step + 1) % 100 == 0:
            log_cb(step + 1, float(loss.detach()))
    model.eval()
    _fit_center(model, index, clips, rng)
    return model


@torch.no_grad()
def _fit_center(model: Lipreader, index, clips, rng, sample: int = 512) -> None:
    feats = []
    for _ in range(sample):
        cid = clips[int(rng.integers(len(clips)))]
        fi = int(rng.integers(index.by_id[cid]["n_frames"]))
        feats.append(torch.from_numpy(index.load_frame(cid, fi)))
    model.center.copy_(model._features(torch.stack(feats)).mean(dim=0))


@torch.no_grad()
def lipreader_r2(model: Lipreader, index, split: str = "val",
                 max_frames: int = 2000, seed: int = 0) -> float:
    """Held-out R^2 of the aperture regression."""
    rng = np.random.default_rng(seed)
    clips = [c["id"] for c in index.entries(split)]
    preds, gts = [], []
    per_clip = max(1, max_frames // max(len(clips), 1))
    for cid in clips:
        track = index.load_labels(cid)["mouth_open"]
        idx = rng.choice(len(track), size=min(per_clip, len(track)), replace=False)
        frames = torch.stack([torch.from_numpy(index.load_frame(cid, int(i))) for i in idx])
        preds.append(model.predict(frames).numpy())
        gts.append(track[idx])
    p = np.concatenate(preds)
    g = np.concatenate(gts)
    ss_res = float(((p - g) ** 2).sum())
    ss_tot = float(((g - g.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@torch.no_grad()
def lipscore(gen_frames: torch.Tensor, gt_frames: torch.Tensor,
             lipreader: Lipreader) -> float:
    """Mean per-frame cosine similarity of lipreader embeddings, in [-1, 1]."""
    if gen_frames.shape[0] != gt_frames.shape[0]:
        raise ValueError(f"length mismatch: {gen_frames.shape[0]} vs {gt_frames.shape[0]}")
    e_g = lipreader.embed(torch.as_tensor(gen_frames, dtype=torch.float32))
    e_t = lipreader.embed(torch.as_tensor(gt_frames, dtype=torch.float32))
    n_g = e_g.norm(dim=1)
    n_t = e_t.norm(dim=1)
    if float(n_g.min()) < 1e-8 or float(n_t.min()) < 1e-8:
        raise ValueError("zero-norm embedding")
    return float(((e_g * e_t).sum(dim=1) / (n_g * n_t)).mean())


def save_lipreader(model: Lipreader, path) -> None:
    save_module(path, LIPREADER_MAGIC, {"embed_dim": model.embed_dim}, model)


def load_lipreader(path) -> Lipreader:
    _, config, _ = load_checkpoint(path, expect_magic=LIPREADER_MAGIC)
    model = Lipreader(embed_dim=config["embed_dim"])
    load_module(path, LIPREADER_MAGIC, model)
    model.eval()
    return model
