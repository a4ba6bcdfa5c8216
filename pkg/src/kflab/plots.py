"""SVG plot emission for evaluation reports.

Every function takes already-loaded data plus an output path and writes one
SVG. `plot_report` sniffs a report file produced elsewhere in the package
(sliding-FID CSV, perturbation CSV, training log, arena report) and picks the
matching renderer.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_sliding_fid(series, out_path, slope: float | None = None,
                     label: str = "FID", extra_series: dict | None = None):
    """FID-over-time line plot; `series` is a list of (t_sec, fid) pairs."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    t = [p[0] for p in series]
    v = [p[1] for p in series]
    ax.plot(t, v, marker="o", label=label)
    if extra_series:
        for name, pts in extra_series.items():
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=name)
    if slope is not None:
        fit = np.polyval(np.polyfit(t, v, 1), t)
        ax.plot(t, fit, linestyle="--", color="gray",
                label=f"slope {slope:.4g}/s")
    ax.set_xlabel("window start (s)")
    ax.set_ylabel("FID")
    ax.legend()
    return _finish(fig, out_path)


def plot_perturbation(rows, out_path, level_name: str = "level",
                      title: str = "perturbation"):
    """Metric value and % deviation vs perturbation level, twin axes."""
    levels = [r["level"] for r in rows]
    values = [r["value"] for r in rows]
    devs = [r["deviation_pct"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(levels, values, marker="o", color="tab:blue")
    ax.set_xlabel(level_name)
    ax.set_ylabel("metric value", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(levels, devs, marker="x", color="tab:red", alpha=0.6)
    ax2.set_ylabel("deviation (%)", color="tab:red")
    ax.set_title(title)
    return _finish(fig, out_path)


def plot_winrate(models, matrix, out_path):
    """Pairwise win-rate heatmap; NaN cells (absent pairings) stay blank."""
    mat = np.asarray(matrix, dtype=np.float64)
    n = len(models)
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * n, 0.8 + 0.8 * n))
    im = ax.imshow(mat, vmin=0.0, vmax=1.0, cmap="RdYlGn")
    ax.set_xticks(range(n), models, rotation=45, ha="right")
    ax.set_yticks(range(n), models)
    for i in range(n):
        for j in range(n):
            if not np.isnan(mat[i, j]):
                ax.text(j, i, f"{mat[i, j]:.2f}", ha="center", va="center",
                        fontsize=8)
    fig.colorbar(im, ax=ax, label="row beats column")
    ax.set_title("win rate")
    return _finish(fig, out_path)


def plot_elo(ratings: dict, ci95: dict, out_path):
    """Median Elo per model with 95% bootstrap interval bars."""
    models = sorted(ratings, key=ratings.get, reverse=True)
    med = [ratings[m] for m in models]
    lo = [ratings[m] - ci95[m][0] for m in models]
    hi = [ci95[m][1] - ratings[m] for m in models]
    fig, ax = plt.subplots(figsize=(1.0 + 0.9 * len(models), 3.5))
    ax.errorbar(range(len(models)), med, yerr=[lo, hi], fmt="o", capsize=4)
    ax.set_xticks(range(len(models)), models, rotation=45, ha="right")
    ax.set_ylabel("Elo (median, 95% CI)")
    ax.axhline(1000.0, color="gray", linestyle=":", linewidth=0.8)
    return _finish(fig, out_path)


def plot_elo_samples(models, samples, out_path):
    """Bootstrap rating distributions, one violin per model."""
    fig, ax = plt.subplots(figsize=(1.0 + 0.9 * len(models), 3.5))
    ax.violinplot([np.asarray(samples[m]) for m in models],
                  showmedians=True)
    ax.set_xticks(range(1, len(models) + 1), models, rotation=45, ha="right")
    ax.set_ylabel("bootstrap Elo")
    return _finish(fig, out_path)


def plot_training_log(rows, out_path, title: str = "training"):
    """Loss curve from (step, loss) pairs, log-scaled y."""
    steps = [r[0] for r in rows]
    losses = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    return _finish(fig, out_path)


def _read_csv(path) -> tuple:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [r for r in reader if r]
    return header, rows


def plot_report(path, out_path=None) -> Path:
    """Render one report file to SVG, dispatching on its shape.

    Recognized inputs: arena report.json, winrate.csv, elo_samples.csv,
    sliding-FID CSV (t_sec,fid), perturbation CSV (level,value,deviation_pct),
    trainer log CSV (step,loss,...).
    """
    path = Path(path)
    if out_path is None:
        out_path = path.with_suffix(".svg")
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        if "ratings" in payload and "ci95" in payload:
            return plot_elo(payload["ratings"],
                            {m: tuple(v) for m, v in payload["ci95"].items()},
                            out_path)
        raise ValueError(f"unrecognized JSON report {path}")

    header, rows = _read_csv(path)
    if header[:2] == ["t_sec", "fid"]:
        series = [(float(t), float(v)) for t, v, *_ in rows if t != "slope"]
        slope_rows = [r for r in rows if r[0] == "slope"]
        slope = float(slope_rows[0][1]) if slope_rows else None
        return plot_sliding_fid(series, out_path, slope=slope)
    if header[1:] == ["value", "deviation_pct"]:
        parsed = [{"level": float(a), "value": float(b), "deviation_pct": float(c)}
                  for a, b, c in rows]
        return plot_perturbation(parsed, out_path, level_name=header[0],
                                 title=path.stem)
    if header[:2] == ["step", "loss"]:
        return plot_training_log([(int(r[0]), float(r[1])) for r in rows],
                                 out_path, title=path.stem)
    if header and header[0] == "model":
        models = header[1:]
        mat = [[float(x) if x else np.nan for x in r[1:]] for r in rows]
        return plot_winrate(models, mat, out_path)
    if path.stem == "elo_samples":
        samples = {m: np.array([float(r[i]) for r in rows])
                   for i, m in enumerate(header)}
        return plot_elo_samples(header, samples, out_path)
    raise ValueError(f"unrecognized report format {path}")
