"""Frechet distance between Gaussian feature statistics, with a mergeable
accumulator and the sliding-window drift analysis.

d^2 = |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})

The matrix square root runs through scipy's Schur-based sqrtm; tiny negative
or imaginary leakage from near-singular products is clamped inside a -1e-8
relative tolerance and anything worse raises.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

_CLAMP_TOL = 1e-8


@dataclass
class FidStats:
    mu: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mu.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("cov shape does not match mu")
        if not (np.isfinite(self.mu).all() and np.isfinite(self.cov).all()):
            raise ValueError("non-finite statistics")
        if np.abs(self.cov - self.cov.T).max() > 1e-8:
            raise ValueError("cov not symmetric within 1e-8")

    @property
    def underdetermined(self) -> bool:
        """Fewer samples than feature dimensions; estimates are unreliable."""
        return self.n < self.mu.shape[0]


class FidAccumulator:
    """Streaming (mean, co-moment, count) with an exact merge.

    Accumulation order does not change the finalized statistics beyond float
    rounding, so per-clip accumulators can be merged for bootstrap resamples.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def update(self, rows: np.ndarray) -> "FidAccumulator":
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"rows must be [n, {self.dim}]")
        other = FidAccumulator(self.dim)
        other.n = x.shape[0]
        other.mean = x.mean(axis=0)
        centered = x - other.mean
        other.m2 = centered.T @ centered
        return self.merge(other)

    def merge(self, other: "FidAccumulator") -> "FidAccumulator":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.m2 = self.m2 + other.m2 + np.outer(delta, delta) * self.n * other.n / n
        self.mean = self.mean + delta * other.n / n
        self.n = n
        return self

    def finalize(self) -> FidStats:
        if self.n < 2:
            raise ValueError("need at least 2 samples for a covariance")
        return FidStats(mu=self.mean.copy(), cov=self.m2 / (self.n - 1), n=self.n)


def frechet_distance(a: FidStats, b: FidStats) -> float:
    if a.mu.shape != b.mu.shape:
        raise ValueError("feature dimensions differ")
    diff = float(((a.mu - b.mu) ** 2).sum())
    prod = a.cov @ b.cov
    sq, _ = scipy.linalg.sqrtm(prod, disp=False)
    scale = max(float(np.abs(sq).max()), 1.0)
    if np.iscomplexobj(sq):
        if float(np.abs(sq.imag).max()) > 1e-6 * scale:
            raise ValueError("matrix square root has a large imaginary part")
        sq = sq.real
    tr = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(sq))
    val = diff + tr
    if val < -_CLAMP_TOL * max(diff + abs(tr), 1.0):
        raise ValueError(f"Frechet distance {val} below clamping tolerance")
    return max(val, 0.0)


@dataclass
class SlidingFid:
    series: list   # (window start sec, fid)
    slope: float   # least-squares drift, fid units per second


def sliding_fid(gen_clips, real_clips, extractor, window_sec: float = 1.0,
                stride_sec: float = 1.0, fps: int = 25) -> SlidingFid:
    """Per-offset Frechet distance over frames pooled from all clips.

    Both clip lists hold [L, 3, H, W] frame arrays; windows cover the common
    prefix (shortest clip). `extractor(frames) -> [L, d]` supplies features.
    """
    if not gen_clips or not real_clips:
        raise ValueError("empty clip list")
    win = int(round(window_sec * fps))
    stride = int(round(stride_sec * fps))
    shortest = min(min(c.shape[0] for c in gen_clips),
                   min(c.shape[0] for c in real_clips))
    if shortest < win:
        raise ValueError(f"clips shorter ({shortest}) than one window ({win})")
    n_windows = (shortest - win) // stride + 1

    gen_feats = [np.asarray(extractor(c), dtype=np.float64) for c in gen_clips]
    real_feats = [np.asarray(extractor(c), dtype=np.float64) for c in real_clips]
    dim = gen_feats[0].shape[1]

    series = []
    for i in range(n_windows):
        lo = i * stride
        acc_g, acc_r = FidAccumulator(dim), FidAccumulator(dim)
        for f in gen_feats:
            acc_g.update(f[lo:lo + win])
        for f in real_feats:
            acc_r.update(f[lo:lo + win])
        series.append((lo / fps, frechet_distance(acc_g.finalize(), acc_r.finalize())))

    t = np.array([row[0] for row in series])
    y = np.array([row[1] for row in series])
    slope = float(np.polyfit(t, y, 1)[0]) if len(series) > 1 else 0.0
    return SlidingFid(series=series, slope=slope)


def save_sliding_csv(path, result: SlidingFid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_sec", "fid"])
        for t, v in result.series:
            w.writerow([f"{t:.3f}", f"{v:.6f}"])
        w.writerow(["slope", f"{result.slope:.6f}"])
