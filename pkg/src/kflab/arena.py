"""Pairwise-preference ranking: win-rate matrices and bootstrapped Elo.

Matches come from forced-choice A/B judgments (no ties). Ratings use standard
logistic Elo (base 10, scale 400, K=32, 1000 start). Because Elo replay is
order-sensitive, the bootstrap shuffles the match order each round and replays
from scratch; medians and percentile bands over rounds give the reported
rating and its 95% interval.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

K_FACTOR = 32.0
START_RATING = 1000.0


@dataclass
class MatchRecord:
    model_a: str
    model_b: str
    winner: str  # "a" or "b"

    def __post_init__(self):
        if self.model_a == self.model_b:
            raise ValueError("a match needs two distinct models")
        if self.winner not in ("a", "b"):
            raise ValueError(f"winner must be 'a' or 'b', got {self.winner!r}")


@dataclass
class EloReport:
    ratings: dict          # model -> median rating over bootstrap rounds
    ci95: dict             # model -> (2.5th, 97.5th percentile)
    winrate: tuple         # (model order, matrix with NaN for absent pairings)
    n_bootstrap: int
    samples: dict          # model -> np.ndarray of per-round final ratings


def expected_score(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def elo_update(r_a: float, r_b: float, winner: str, k: float = K_FACTOR):
    """One match update; returns (r_a', r_b'). Rating sum is conserved."""
    if not (math.isfinite(r_a) and math.isfinite(r_b)):
        raise ValueError("ratings must be finite")
    e_a = expected_score(r_a, r_b)
    s_a = 1.0 if winner == "a" else 0.0
    delta = k * (s_a - e_a)
    return r_a + delta, r_b - delta


def replay_elo(matches, k: float = K_FACTOR, start: float = START_RATING,
               order=None) -> dict:
    """Replay a match sequence from scratch; `order` optionally permutes it."""
    ratings = {}
    idx = range(len(matches)) if order is None else order
    for i in idx:
        m = matches[i]
        r_a = ratings.setdefault(m.model_a, start)
        r_b = ratings.setdefault(m.model_b, start)
        ratings[m.model_a], ratings[m.model_b] = elo_update(r_a, r_b, m.winner, k)
    return ratings


def winrate_matrix(matches):
    """W[i][j] = fraction of i-vs-j matches won by i; NaN where no matches.

    Returns (sorted model list, matrix). Absent pairings stay NaN rather than
    0 so downstream consumers can tell "never compared" from "never won".
    """
    models = sorted({m.model_a for m in matches} | {m.model_b for m in matches})
    pos = {m: i for i, m in enumerate(models)}
    wins = np.zeros((len(models), len(models)))
    total = np.zeros_like(wins)
    for m in matches:
        i, j = pos[m.model_a], pos[m.model_b]
        total[i, j] += 1
        total[j, i] += 1
        if m.winner == "a":
            wins[i, j] += 1
        else:
            wins[j, i] += 1
    with np.errstate(invalid="ignore"):
        mat = wins / total
    np.fill_diagonal(mat, np.nan)
    return models, mat


def bootstrap_elo(matches, n_rounds: int = 1000, k: float = K_FACTOR,
                  seed: int = 0) -> EloReport:
    """Shuffle-and-replay bootstrap. Deterministic given (matches, seed)."""
    if not matches:
        raise ValueError("need at least one match")
    models = sorted({m.model_a for m in matches} | {m.model_b for m in matches})
    samples = {m: np.empty(n_rounds) for m in models}
    for r in range(n_rounds):
        rng = np.random.default_rng([seed, r])  # per-round derived seed
        order = rng.permutation(len(matches))
        ratings = replay_elo(matches, k=k, order=order)
        for m in models:
            samples[m][r] = ratings.get(m, START_RATING)
    ratings = {m: float(np.median(samples[m])) for m in models}
    ci95 = {m: (float(np.percentile(samples[m], 2.5)),
                float(np.percentile(samples[m], 97.5))) for m in models}
    return EloReport(ratings=ratings, ci95=ci95, winrate=winrate_matrix(matches),
                     n_bootstrap=n_rounds, samples=samples)


def load_matches_csv(path) -> list:
    """Read `model_a,model_b,winner` rows (winner is 'a'/'b' or a model name)."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            winner = row["winner"].strip()
            if winner not in ("a", "b"):
                if winner == row["model_a"]:
                    winner = "a"
                elif winner == row["model_b"]:
                    winner = "b"
                else:
                    raise ValueError(f"winner {winner!r} names neither model")
            out.append(MatchRecord(row["model_a"].strip(), row["model_b"].strip(), winner))
    if not out:
        raise ValueError(f"no matches in {path}")
    return out


def save_report(report: EloReport, out_dir) -> None:
    """Write report.json plus winrate.csv / elo_samples.csv for plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    models, mat = report.winrate
    payload = {
        "ratings": report.ratings,
        "ci95": {m: list(v) for m, v in report.ci95.items()},
        "n_bootstrap": report.n_bootstrap,
        "winrate_models": models,
        "winrate": [[None if np.isnan(x) else round(float(x), 6) for x in row] for row in mat],
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    with open(out / "winrate.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model"] + models)
        for m, row in zip(models, mat):
            w.writerow([m] + ["" if np.isnan(x) else f"{x:.4f}" for x in row])
    with open(out / "elo_samples.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(models)
        for r in range(report.n_bootstrap):
            w.writerow([f"{report.samples[m][r]:.3f}" for m in models])
