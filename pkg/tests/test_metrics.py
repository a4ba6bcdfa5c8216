"""Frechet statistics and drift, lipreader embedding score, vocalization
classifier metrics, emotion accuracy, and the perturbation harness."""

import csv

import numpy as np
import pytest
import torch

from kflab.metrics.emotion import (EmotionRegressor, emotion_accuracy,
                                   train_emotion_regressor)
from kflab.metrics.fid import (FidAccumulator, FidStats, frechet_distance,
                               save_sliding_csv, sliding_fid)
from kflab.metrics.lipscore import (Lipreader, lipreader_r2, lipscore,
                                    train_lipreader)
from kflab.metrics.nsv import (NsvClassifier, classify_clip, macro_f1,
                               nsv_accuracy, save_confusion_csv,
                               train_nsv_classifier)
from kflab.metrics.perturb import (TIME_GRID_MS, h_shift_frames,
                                   perturbation_harness, rotate_frames,
                                   save_curve_csv, time_shift_frames)
from kflab.synthworld import NSV_CLASSES, render_clip


def _random_stats(rng, dim, n=500):
    a = rng.normal(size=(dim, dim))
    cov = a @ a.T + 0.1 * np.eye(dim)
    return FidStats(mu=rng.normal(size=dim), cov=cov, n=n)


def _fid_eigh_oracle(a: FidStats, b: FidStats) -> float:
    # trace of (S_a S_b)^(1/2) via the similar symmetric product
    # S_a^(1/2) S_b S_a^(1/2), whose eigenvalues eigh gets directly
    va, ua = np.linalg.eigh(a.cov)
    half = (ua * np.sqrt(np.clip(va, 0.0, None))) @ ua.T
    m = half @ b.cov @ half
    ev = np.linalg.eigvalsh((m + m.T) / 2.0)
    tr_sq = np.sqrt(np.clip(ev, 0.0, None)).sum()
    return float(((a.mu - b.mu) ** 2).sum()
                 + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sq)


def test_frechet_matches_eigh_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        dim = int(rng.integers(2, 13))
        a, b = _random_stats(rng, dim), _random_stats(rng, dim)
        got = frechet_distance(a, b)
        want = _fid_eigh_oracle(a, b)
        assert abs(got - want) <= 1e-9 * max(abs(want), 1.0)


def test_frechet_closed_forms():
    rng = np.random.default_rng(1)
    a = _random_stats(rng, 5)
    assert frechet_distance(a, a) == 0.0
    # mean translation only
    b = FidStats(mu=a.mu + 2.0, cov=a.cov.copy(), n=a.n)
    assert abs(frechet_distance(a, b) - 4.0 * 5) < 1e-8
    # proportional covariances commute: d = |dmu|^2 + (sqrt(2)-1)^2 tr(S)
    c = FidStats(mu=a.mu, cov=2.0 * a.cov, n=a.n)
    want = (np.sqrt(2.0) - 1.0) ** 2 * np.trace(a.cov)
    assert abs(frechet_distance(a, c) - want) < 1e-8
    # 1-d: (m1-m2)^2 + (s1-s2)^2
    one = frechet_distance(FidStats([1.0], [[4.0]], 10), FidStats([3.0], [[9.0]], 10))
    assert abs(one - (4.0 + 1.0)) < 1e-10


def test_fid_stats_validation():
    with pytest.raises(ValueError):
        FidStats(mu=np.zeros(3), cov=np.zeros((2, 2)), n=5)
    with pytest.raises(ValueError):
        FidStats(mu=np.array([np.nan, 0.0]), cov=np.eye(2), n=5)
    bad = np.eye(3)
    bad[0, 1] = 1e-3
    with pytest.raises(ValueError):
        FidStats(mu=np.zeros(3), cov=bad, n=5)
    with pytest.raises(ValueError):
        frechet_distance(FidStats(np.zeros(2), np.eye(2), 9),
                         FidStats(np.zeros(3), np.eye(3), 9))
    assert FidStats(np.zeros(4), np.eye(4), 3).underdetermined
    assert not FidStats(np.zeros(4), np.eye(4), 4).underdetermined


def test_accumulator_matches_numpy_and_merge_order():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(230, 6))
    whole = FidAccumulator(6).update(x).finalize()
    assert np.allclose(whole.mu, x.mean(axis=0), atol=1e-12)
    assert np.allclose(whole.cov, np.cov(x, rowvar=False, ddof=1), atol=1e-12)
    assert whole.n == 230

    chunked = FidAccumulator(6)
    for lo in range(0, 230, 37):
        chunked.update(x[lo:lo + 37])
    merged = FidAccumulator(6)
    parts = [FidAccumulator(6).update(x[lo:lo + 50]) for lo in range(0, 230, 50)]
    for p in parts:
        merged.merge(p)
    for acc in (chunked, merged):
        s = acc.finalize()
        assert np.allclose(s.mu, whole.mu, atol=1e-10)
        assert np.allclose(s.cov, whole.cov, atol=1e-10)


def test_accumulator_validation():
    acc = FidAccumulator(4)
    with pytest.raises(ValueError):
        acc.update(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        acc.update(np.zeros(4))
    with pytest.raises(ValueError):
        acc.merge(FidAccumulator(5))
    with pytest.raises(ValueError):
        FidAccumulator(4).update(np.zeros((1, 4))).finalize()
    # merging an empty accumulator is the identity
    acc.update(np.arange(8.0).reshape(2, 4))
    before = acc.finalize()
    acc.merge(FidAccumulator(4))
    after = acc.finalize()
    assert np.array_equal(before.mu, after.mu) and before.n == after.n


def _feature_clips(rng, n_clips, length, dim, drift=0.0):
    clips = []
    for _ in range(n_clips):
        f = rng.normal(size=(length, dim))
        f[:, 0] += drift * np.arange(length)
        clips.append(f)
    return clips


def test_sliding_fid_detects_drift():
    rng = np.random.default_rng(3)
    real = _feature_clips(rng, 4, 100, 4)
    drifting = _feature_clips(rng, 4, 100, 4, drift=0.2)
    stationary = _feature_clips(rng, 4, 100, 4)
    ident = lambda c: c
    drift = sliding_fid(drifting, real, ident)
    flat = sliding_fid(stationary, real, ident)
    assert [t for t, _ in drift.series] == [0.0, 1.0, 2.0, 3.0]
    assert drift.slope > 1.0
    assert drift.series[-1][1] > drift.series[0][1]
    assert abs(flat.slope) < drift.slope / 10


def test_sliding_fid_validation_and_csv(tmp_path):
    ident = lambda c: c
    with pytest.raises(ValueError):
        sliding_fid([], [np.zeros((50, 3))], ident)
    with pytest.raises(ValueError):
        sliding_fid([np.zeros((10, 3))], [np.zeros((50, 3))], ident)

    rng = np.random.default_rng(4)
    r = sliding_fid(_feature_clips(rng, 3, 60, 3), _feature_clips(rng, 3, 60, 3), ident)
    path = tmp_path / "drift.csv"
    save_sliding_csv(path, r)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t_sec", "fid"]
    assert len(rows) == len(r.series) + 2
    assert rows[-1][0] == "slope"
    assert abs(float(rows[-1][1]) - r.slope) < 1e-5


def test_lipscore_self_is_one_and_validation():
    torch.manual_seed(0)
    model = Lipreader()
    clip = torch.from_numpy(render_clip(41, 1.0).frames)
    assert abs(lipscore(clip, clip, model) - 1.0) < 1e-6
    other = torch.from_numpy(render_clip(42, 1.0).frames)
    assert lipscore(clip, other, model) < 1.0
    with pytest.raises(ValueError):
        lipscore(clip[:-1], clip, model)


def test_lipscore_zero_norm_rejected():
    torch.manual_seed(1)
    model = Lipreader()
    clip = torch.from_numpy(render_clip(43, 1.0).frames)
    with torch.no_grad():
        # same batched evaluation lipscore runs, so the subtraction is exact
        model.center.copy_(model._features(clip)[0])
    with pytest.raises(ValueError, match="zero-norm"):
        lipscore(clip, clip, model)


def test_lipreader_training_smoke(index):
    model = train_lipreader(index, steps=10, batch=16, seed=0)
    assert float(model.center.norm()) > 0  # fitted, not the zero buffer
    r2 = lipreader_r2(model, index, split="val", max_frames=200)
    assert np.isfinite(r2) and r2 < 1.0
    clip = torch.from_numpy(index.load_frames(index.entries("val")[0]["id"])[:30])
    assert -1.0 <= lipscore(clip, clip, model) <= 1.0


class _PlantedNsv:
    """Predicts the class index planted as the clip's constant pixel value."""

    def logits(self, frames):
        out = torch.zeros(len(NSV_CLASSES))
        out[int(round(float(frames[0, 0, 0, 0])))] = 1.0
        return out


def test_nsv_accuracy_confusion_placement():
    clips = [np.full((4, 3, 2, 2), v, dtype=np.float32) for v in (0, 3, 3, 5)]
    labels = [NSV_CLASSES[0], NSV_CLASSES[3], NSV_CLASSES[2], NSV_CLASSES[5]]
    acc, confusion = nsv_accuracy(_PlantedNsv(), clips, labels)
    assert acc == 0.75
    assert confusion.sum() == 4
    assert confusion[0, 0] == 1 and confusion[3, 3] == 1
    assert confusion[2, 3] == 1 and confusion[5, 5] == 1
    with pytest.raises(ValueError):
        nsv_accuracy(_PlantedNsv(), clips, labels[:-1])


def test_macro_f1_hand_oracle():
    k = len(NSV_CLASSES)
    conf = np.zeros((k, k), dtype=np.int64)
    conf[0, 0], conf[0, 1] = 3, 1   # class 0: tp 3, fn 1, fp 0
    conf[1, 1] = 2                  # class 1: tp 2, fn 0, fp 1
    want = (2 * 3 / (2 * 3 + 0 + 1) + 2 * 2 / (2 * 2 + 1 + 0)) / 2
    assert abs(macro_f1(conf) - want) < 1e-12
    assert macro_f1(np.eye(k, dtype=np.int64) * 5) == 1.0
    assert macro_f1(np.zeros((k, k), dtype=np.int64)) == 0.0
    # a populated row with zero hits contributes a zero, not a skip
    conf2 = np.zeros((k, k), dtype=np.int64)
    conf2[0, 1] = 2
    conf2[1, 1] = 3
    assert abs(macro_f1(conf2) - (0.0 + 2 * 3 / (2 * 3 + 2)) / 2) < 1e-12


def test_nsv_training_smoke(index, tmp_path):
    model = train_nsv_classifier(index, steps=6, batch=2, crop_len=16, seed=0)
    frames = index.load_frames(index.entries("val")[0]["id"])[:20]
    assert classify_clip(model, frames) in NSV_CLASSES
    feats = model.frame_features(torch.from_numpy(frames))
    assert feats.shape == (20, 64)
    conf = np.zeros((len(NSV_CLASSES), len(NSV_CLASSES)), dtype=np.int64)
    conf[0, 0] = 2
    save_confusion_csv(tmp_path / "conf.csv", conf)
    rows = list(csv.reader((tmp_path / "conf.csv").open()))
    assert rows[0] == ["true\\pred"] + list(NSV_CLASSES)
    assert rows[1][0] == NSV_CLASSES[0] and rows[1][1] == "2"


class _ConstantEmotion:
    def predict(self, frames):
        return torch.zeros(frames.shape[0], 2)


def test_emotion_accuracy_radius():
    # targets at distances 0.1, 0.3, 0.4, 1.0 from the constant (0, 0) output
    track = np.array([[0.1, 0.0], [0.0, 0.3], [0.4, 0.0], [0.6, 0.8]],
                     dtype=np.float32)
    clips = [np.zeros((4, 3, 2, 2), dtype=np.float32)]
    assert emotion_accuracy(_ConstantEmotion(), clips, [track]) == 0.5
    assert emotion_accuracy(_ConstantEmotion(), clips, [track], radius=0.05) == 0.0
    with pytest.raises(ValueError):
        emotion_accuracy(_ConstantEmotion(), clips, [track[:2]])
    with pytest.raises(ValueError):
        emotion_accuracy(_ConstantEmotion(), clips, [])


def test_emotion_training_smoke(index):
    model = train_emotion_regressor(index, steps=8, batch=8, seed=0)
    assert isinstance(model, EmotionRegressor)
    entry = index.entries("val")[0]
    frames = index.load_frames(entry["id"])[:20]
    labels = index.load_labels(entry["id"])
    track = np.stack([labels["valence"][:20], labels["arousal"][:20]], axis=1)
    acc = emotion_accuracy(model, [frames], [track])
    assert 0.0 <= acc <= 1.0


def test_time_shift_quantization():
    frames = np.arange(10, dtype=np.float32).reshape(10, 1, 1, 1)
    shifted, k = time_shift_frames(frames, 80.0)  # 80 ms at 25 fps = 2 frames
    assert k == 2 and shifted.shape[0] == 8
    assert shifted[0].item() == 2.0
    same, k0 = time_shift_frames(frames, 0.0)
    assert k0 == 0 and same.shape[0] == 10
    with pytest.raises(ValueError):
        time_shift_frames(frames, 450.0)  # 11 frames > clip length


def test_spatial_perturbation_primitives():
    rng = np.random.default_rng(5)
    frames = rng.random((3, 3, 8, 8)).astype(np.float32)
    assert h_shift_frames(frames, 0) is frames
    moved = h_shift_frames(frames, 2.0)
    assert np.allclose(moved[..., 2:], frames[..., :-2], atol=1e-6)
    with pytest.raises(ValueError):
        h_shift_frames(frames, 8)
    assert rotate_frames(frames, 0) is frames
    rot = rotate_frames(frames, 15.0)
    assert rot.shape == frames.shape and not np.allclose(rot, frames)


def test_perturbation_harness_rows(tmp_path):
    frames = np.arange(30, dtype=np.float32).reshape(30, 1, 1, 1)
    frames = np.broadcast_to(frames, (30, 3, 4, 4)).copy()
    metric = lambda a, b: 1.0 / (1.0 + np.abs(a - b).mean())
    rows = perturbation_harness(metric, frames, "time_shift", [0, 40, 120])
    assert [r["level"] for r in rows] == [0, 40, 120]
    assert rows[0]["value"] == 1.0 and rows[0]["deviation_pct"] == 0.0
    # shifting k frames offsets every value by exactly k
    assert abs(rows[1]["value"] - 1.0 / 2.0) < 1e-6
    assert abs(rows[2]["value"] - 1.0 / 4.0) < 1e-6
    assert abs(rows[1]["deviation_pct"] + 50.0) < 1e-4
    assert abs(rows[2]["deviation_pct"] + 75.0) < 1e-4

    save_curve_csv(tmp_path / "curve.csv", rows, level_name="ms")
    got = list(csv.reader((tmp_path / "curve.csv").open()))
    assert got[0] == ["ms", "value", "deviation_pct"]
    assert len(got) == 4


def test_perturbation_harness_validation():
    frames = np.zeros((10, 3, 4, 4), dtype=np.float32)
    metric = lambda a, b: 1.0
    with pytest.raises(ValueError):
        perturbation_harness(metric, frames, "zoom", [0, 1])
    with pytest.raises(ValueError):
        perturbation_harness(metric, frames, "h_shift", [0, 2, 1])
    with pytest.raises(ValueError):
        perturbation_harness(metric, frames, "rotate", [0, 5],
                             reference_frames=np.zeros((9, 3, 4, 4)))
    assert TIME_GRID_MS[0] == 0 and TIME_GRID_MS[-1] == 1000
    assert len(TIME_GRID_MS) == 26
