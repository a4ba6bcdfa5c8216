"""Nine-way vocalization classifier (speech + 8 non-speech classes).

Factorized video convnet: a per-frame 2D encoder pools each frame to a 64-d
feature, then strided 1D convolutions mix over time before the class head.
The per-frame features double as the Frechet-distance feature space, which is
what lets the sliding-window analysis pool frames across clips.
"""

from __future__ import annotations

import csv

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..checkpoint import NSV_MAGIC, load_checkpoint, load_module, save_module
from ..synthworld import NSV_CLASSES

FEATURE_DIM = 64


class NsvClassifier(nn.Module):
    def __init__(self, n_classes: int = len(NSV_CLASSES)):
        super().__init__()
        self.n_classes = n_classes
        self.encoder = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, FEATURE_DIM, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.temporal = nn.Sequential(
            nn.Conv1d(FEATURE_DIM, 64, 5, stride=2, padding=2), nn.SiLU(),
            nn.Conv1d(64, 64, 5, stride=2, padding=2), nn.SiLU(),
        )
        self.head = nn.Linear(64, n_classes)

    def frame_features(self, frames: torch.Tensor) -> torch.Tensor:
        """[L, 3, H, W] -> [L, FEATURE_DIM]; the FID feature space."""
        return self.encoder(frames).mean(dim=(-2, -1))

    def logits(self, frames: torch.Tensor) -> torch.Tensor:
        """Single clip [L, 3, H, W] or batch [B, L, 3, H, W] -> class logits."""
        batched = frames.ndim == 5
        x = frames if batched else frames.unsqueeze(0)
        b, l = x.shape[:2]
        feats = self.frame_features(x.reshape(b * l, *x.shape[2:]))
        h = self.temporal(feats.reshape(b, l, -1).transpose(1, 2)).mean(dim=-1)
        out = self.head(h)
        return out if batched else out.squeeze(0)


def train_nsv_classifier(index, split: str = "train", steps: int = 1500,
                         batch: int = 8, crop_len: int = 64, lr: float = 1e-3,
                         seed: int = 0, log_cb=None) -> NsvClassifier:
    """Balanced-class sampling of random temporal crops, cross-entropy."""
    torch.manual_seed(seed)
    model = NsvClassifier()
    by_class = {c: [] for c in NSV_CLASSES}
    for e in index.entries(split):
        by_class[e["nsv_label"]].append(e["id"])
    classes = [c for c in NSV_CLASSES if by_class[c]]
    if not classes:
        raise ValueError(f"no clips in split {split!r}")
    rng = np.random.default_rng(seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    cache = {}
    for step in range(steps):
        xs, ys = [], []
        for _ in range(batch):
            label = classes[int(rng.integers(len(classes)))]
            cid = by_class[label][int(rng.integers(len(by_class[label])))]
            if cid not in cache:
                cache[cid] = torch.from_numpy(index.load_frames(cid))
            clip = cache[cid]
            lo = int(rng.integers(0, max(clip.shape[0] - crop_len, 0) + 1))
            xs.append(clip[lo:lo + crop_len])
            ys.append(NSV_CLASSES.index(label))
        loss = F.cross_entropy(model.logits(torch.stack(xs)),
                               torch.tensor(ys, dtype=torch.long))
        if not torch.isfinite(loss):
            raise FloatingPointError(f"nsv loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_cb and (step + 1) % 100 == 0:
            log_cb(step + 1, float(loss.detach()))
    model.eval()
    return model


@torch.no_grad()
def classify_clip(model: NsvClassifier, frames) -> str:
    logits = model.logits(torch.as_tensor(np.asarray(frames), dtype=torch.float32))
    return NSV_CLASSES[int(logits.argmax())]


@torch.no_grad()
def nsv_accuracy(model: NsvClassifier, clips, labels) -> tuple:
    """Fraction of clips classified as their driving label, plus the 9x9
    confusion matrix (rows: true, cols: predicted)."""
    if len(clips) != len(labels):
        raise ValueError("clips and labels differ in length")
    k = len(NSV_CLASSES)
    confusion = np.zeros((k, k), dtype=np.int64)
    hits = 0
    for frames, label in zip(clips, labels):
        pred = classify_clip(model, frames)
        confusion[NSV_CLASSES.index(label), NSV_CLASSES.index(pred)] += 1
        hits += pred == label
    return hits / len(clips), confusion


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1; absent classes count as 0."""
    scores = []
    for i in range(confusion.shape[0]):
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        if confusion[i, :].sum() == 0:
            continue
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


@torch.no_grad()
def heldout_confusion(model: NsvClassifier, index, split: str = "val") -> np.ndarray:
    entries = index.entries(split)
    clips = [index.load_frames(e["id"]) for e in entries]
    labels = [e["nsv_label"] for e in entries]
    _, confusion = nsv_accuracy(model, clips, labels)
    return confusion


def save_confusion_csv(path, confusion: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(NSV_CLASSES))
        for i, row in enumerate(confusion):
            w.writerow([NSV_CLASSES[i]] + [int(x) for x in row])


def save_nsv(model: NsvClassifier, path) -> None:
    save_module(path, NSV_MAGIC, {"n_classes": model.n_classes}, model)


def load_nsv(path) -> NsvClassifier:
    _, config, _ = load_checkpoint(path, expect_magic=NSV_MAGIC)
    model = NsvClassifier(n_classes=config["n_classes"])
    load_module(path, NSV_MAGIC, model)
    model.eval()
    return model
