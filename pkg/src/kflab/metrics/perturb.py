"""Controlled temporal and spatial perturbations of a clip, reporting each
metric value and its percentage deviation from the unperturbed one.

Time shifts are quantized to whole frames (40 ms at 25 fps); the shifted clip
is compared against the reference on their overlapping prefix. Spatial
perturbations resample with nearest-edge padding.
"""

from __future__ import annotations

import csv

import numpy as np
import scipy.ndimage

from .. import FPS

KINDS = ("time_shift", "h_shift", "rotate")
TIME_GRID_MS = tuple(range(0, 1001, 40))


def time_shift_frames(frames: np.ndarray, ms: float, fps: int = FPS):
    """Drop the first round(ms*fps/1000) frames; returns (shifted, k)."""
    k = int(round(ms * fps / 1000.0))
    if k < 0 or k >= frames.shape[0]:
        raise ValueError(f"time shift of {k} frames exceeds clip length")
    return frames[k:], k


def h_shift_frames(frames: np.ndarray, px: float) -> np.ndarray:
    if abs(px) >= frames.shape[-1]:
        raise ValueError("horizontal shift exceeds frame width")
    if px == 0:
        return frames
    return scipy.ndimage.shift(frames, (0, 0, 0, px), order=1, mode="nearest")


def rotate_frames(frames: np.ndarray, deg: float) -> np.ndarray:
    if deg == 0:
        return frames
    return scipy.ndimage.rotate(frames, deg, axes=(-2, -1), reshape=False,
                                order=1, mode="nearest")


def perturbation_harness(metric_fn, clip_frames, kind: str, grid,
                         reference_frames=None, fps: int = FPS) -> list:
    """Evaluate `metric_fn(perturbed, reference)` across a perturbation grid.

    Returns one dict per level: {level, value, deviation_pct}, the deviation
    taken against the level-0 value (computed even when 0 is not on the
    grid). The reference defaults to the clip itself, which is the
    ground-truth-vs-itself protocol of the robustness study.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    grid = list(grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted strictly ascending")
    frames = np.asarray(clip_frames, dtype=np.float32)
    ref = frames if reference_frames is None else np.asarray(reference_frames,
                                                             dtype=np.float32)
    if frames.shape != ref.shape:
        raise ValueError("clip and reference shapes differ")

    def evaluate(level):
        if kind == "time_shift":
            shifted, k = time_shift_frames(frames, level, fps)
            n = shifted.shape[0]
            return float(metric_fn(shifted, ref[:n]))
        if kind == "h_shift":
            return float(metric_fn(h_shift_frames(frames, level), ref))
        return float(metric_fn(rotate_frames(frames, level), ref))

    base = evaluate(0)
    rows = []
    for level in grid:
        value = base if level == 0 else evaluate(level)
        dev = 100.0 * (value - base) / abs(base) if base != 0 else 0.0
        rows.append({"level": level, "value": value, "deviation_pct": dev})
    return rows


def save_curve_csv(path, rows, level_name: str = "level") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([level_name, "value", "deviation_pct"])
        for r in rows:
            w.writerow([r["level"], f"{r['value']:.6f}", f"{r['deviation_pct']:.3f}"])
