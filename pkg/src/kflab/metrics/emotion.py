"""Frame-level (valence, arousal) regressor and the emotion accuracy metric.

A prediction is correct when it lands within a fixed radius of the intended
point in the valence-arousal square; accuracy is the fraction of evaluated
frames that do.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..checkpoint import EMOTION_MAGIC, load_checkpoint, load_module, save_module

ACC_RADIUS = 0.35


class EmotionRegressor(nn.Module):
    def __init__(self):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.fc = nn.Sequential(nn.Linear(64, 32), nn.SiLU(), nn.Linear(32, 2))

    def predict(self, frames: torch.Tensor) -> torch.Tensor:
        """[L, 3, H, W] -> [L, 2] (valence, arousal) in [-1, 1]."""
        z = self.convs(frames).mean(dim=(-2, -1))
        return torch.tanh(self.fc(z))


def train_emotion_regressor(index, split: str = "train", steps: int = 2000,
                            batch: int = 64, lr: float = 1e-3, seed: int = 0,
                            log_cb=None) -> EmotionRegressor:
    torch.manual_seed(seed)
    model = EmotionRegressor()
    clips = [c["id"] for c in index.entries(split)]
    if not clips:
        raise ValueError(f"no clips in split {split!r}")
    rng = np.random.default_rng(seed + 1)
    tracks = {cid: index.load_labels(cid) for cid in clips}
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for step in range(steps):
        xs, ys = [], []
        for _ in range(batch):
            cid = clips[int(rng.integers(len(clips)))]
            fi = int(rng.integers(len(tracks[cid]["valence"])))
            xs.append(torch.from_numpy(index.load_frame(cid, fi)))
            ys.append((tracks[cid]["valence"][fi], tracks[cid]["arousal"][fi]))
        loss = F.mse_loss(model.predict(torch.stack(xs)),
                          torch.tensor(ys, dtype=torch.float32))
        if not torch.isfinite(loss):
            raise FloatingPointError(f"emotion loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_cb and (step + 1) % 100 == 0:
            log_cb(step + 1, float(loss.detach()))
    model.eval()
    return model


@torch.no_grad()
def emotion_accuracy(model: EmotionRegressor, clips, intended,
                     radius: float = ACC_RADIUS) -> float:
    """Fraction of frames whose predicted (v, a) lies within `radius` of the
    intended point. `intended` holds one [L, 2] track per clip."""
    if len(clips) != len(intended):
        raise ValueError("clips and intended tracks differ in length")
    hits = total = 0
    for frames, target in zip(clips, intended):
        x = torch.as_tensor(np.asarray(frames), dtype=torch.float32)
        t = torch.as_tensor(np.asarray(target), dtype=torch.float32)
        if t.shape != (x.shape[0], 2):
            raise ValueError("intended track must be [L, 2]")
        pred = model.predict(x)
        hits += int(((pred - t).norm(dim=1) <= radius).sum())
        total += x.shape[0]
    return hits / total


def save_emotion(model: EmotionRegressor, path) -> None:
    save_module(path, EMOTION_MAGIC, {}, model)


def load_emotion(path) -> EmotionRegressor:
    load_checkpoint(path, expect_magic=EMOTION_MAGIC)
    model = EmotionRegressor()
    load_module(path, EMOTION_MAGIC, model)
    model.eval()
    return model
