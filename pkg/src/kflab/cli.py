"""Command-line entry point: dataset building, training, generation,
evaluation, perturbation curves, the ranking arena, ablation tables, and
plot emission.

Conventions shared by every subcommand: outputs are never overwritten
without --force; every artifact-producing command writes a run_manifest.json
recording the command, its config, seeds, checkpoint hashes, and timestamps;
relative checkpoint paths resolve under $KFLAB_CKPT_DIR and --data falls
back to $KFLAB_DATA_DIR. Exit codes: 0 success, 2 usage, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import bisect
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import FPS, GAP_FRAMES, KEYFRAMES_PER_SEGMENT
from . import ablate as ablate_mod
from .arena import bootstrap_elo, load_matches_csv, save_report
from .codec import load_codec, save_codec, train_codec
from .conditioning import fuse_audio
from .denoiser import load_denoiser, save_denoiser
from .guidance import DEFAULT_W_AUD, DEFAULT_W_AUTO, DEFAULT_W_ID, GuidanceSpec
from .metrics.emotion import (emotion_accuracy, load_emotion, save_emotion,
                              train_emotion_regressor)
from .metrics.fid import save_sliding_csv, sliding_fid
from .metrics.lipscore import (lipreader_r2, lipscore, load_lipreader,
                               save_lipreader, train_lipreader)
from .metrics.nsv import (load_nsv, macro_f1, nsv_accuracy, save_confusion_csv,
                          save_nsv, train_nsv_classifier)
from .metrics.perturb import TIME_GRID_MS, perturbation_harness, save_curve_csv
from .pipeline import (autoregressive_baseline, generate_long_video,
                       plan_generation, sample_emotion_curve, save_generation)
from .plots import plot_report
from .synthworld import (DatasetIndex, EmotionCurve, build_dataset,
                         load_frame_png, random_emotion_curve, render_clip)
from .training import (TrainConfig, parse_train_config, train_reduced,
                       train_stage)

STAGE_STEPS = {"keyframe": 5000, "interpolation": 10000, "ar": 5000}
GUIDANCE_KINDS = ("split_cfg", "autoguidance", "plain_cfg", "none")


class UsageError(Exception):
    """Bad flag combinations detected after parsing; exits with code 2."""


# ---------------------------------------------------------------------------
# shared plumbing


def _claim_dir(path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and any(p.iterdir()) and not force:
        raise FileExistsError(f"{p} is not empty; pass --force to overwrite")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _claim_file(path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise FileExistsError(f"{p} exists; pass --force to overwrite")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _data_dir(args) -> Path:
    d = getattr(args, "data", None) or os.environ.get("KFLAB_DATA_DIR")
    if not d:
        raise UsageError("--data (or KFLAB_DATA_DIR) is required")
    return Path(d)


def _ckpt_path(p, for_write: bool = False) -> Path:
    """Resolve a checkpoint path, trying $KFLAB_CKPT_DIR for relative names."""
    path = Path(p)
    base = os.environ.get("KFLAB_CKPT_DIR")
    if path.is_absolute() or not base:
        return path
    if not for_write and path.exists():
        return path
    return Path(base) / path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(where, command: str, args, started: str,
                   checkpoints: dict | None = None, outputs=()) -> Path:
    """One run_manifest.json per artifact-producing command."""
    where = Path(where)
    target = where / "run_manifest.json" if where.is_dir() \
        else where.with_name(where.stem + ".manifest.json")
    config = {k: (str(v) if isinstance(v, Path) else v)
              for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seeds": {k: v for k, v in config.items() if "seed" in k},
        "checkpoint_hashes": {name: _sha256(p) for name, p in
                              (checkpoints or {}).items() if Path(p).exists()},
        "started_at": started,
        "finished_at": _now(),
        "outputs": [str(o) for o in outputs],
    }
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return target


def _load_frames_dir(path) -> np.ndarray:
    """[L, 3, H, W] float32 from a directory of PNGs (frames/ honored)."""
    p = Path(path)
    if (p / "frames").is_dir():
        p = p / "frames"
    files = sorted(p.glob("*.png"))
    if not files:
        raise ValueError(f"no PNG frames under {path}")
    return np.stack([load_frame_png(f) for f in files])


def _resolve_frames(spec: str, args) -> np.ndarray:
    """A frame source: either a directory or clip:<id> from the dataset."""
    if spec.startswith("clip:"):
        index = DatasetIndex(_data_dir(args))
        return np.stack([index.load_frame(spec[5:], i)
                         for i in range(index.by_id[spec[5:]]["n_frames"])])
    return _load_frames_dir(spec)


def _parse_grid(text: str) -> list:
    out = [float(x) for x in text.split(",") if x.strip() != ""]
    if not out:
        raise UsageError("--grid must list at least one level")
    return out


# ---------------------------------------------------------------------------
# dataset


def cmd_dataset_build(args) -> int:
    started = _now()
    out = _claim_dir(args.out, args.force)
    mix = None
    if args.mix:
        mix = {}
        for part in args.mix.split(","):
            k, _, v = part.partition("=")
            mix[k.strip()] = float(v)
    ratios = tuple(float(x) for x in args.splits.split(","))
    build_dataset(out, args.n, split_ratios=ratios, class_mix=mix,
                  duration_sec=args.duration, seed=args.seed,
                  progress=(lambda i, n: print(f"\r{i}/{n} clips", end="",
                                               flush=True)) if args.verbose else None)
    if args.verbose:
        print()
    write_manifest(out, "dataset build", args, started, outputs=[out])
    print(f"dataset: {args.n} clips at {out}")
    return 0


# ---------------------------------------------------------------------------
# training


def _codec_provider(index: DatasetIndex, split: str):
    clips = [c["id"] for c in index.entries(split)]
    if not clips:
        raise ValueError(f"no clips in split {split!r}")
    counts = np.cumsum([index.by_id[c]["n_frames"] for c in clips])

    def provider(i: int) -> torch.Tensor:
        j = bisect.bisect_right(counts, i)
        fi = i - (counts[j - 1] if j else 0)
        return torch.from_numpy(index.load_frame(clips[j], int(fi)))

    return provider, int(counts[-1])


def cmd_train_codec(args) -> int:
    started = _now()
    out = _claim_file(_ckpt_path(args.out, for_write=True), args.force)
    index = DatasetIndex(_data_dir(args))
    provider, total = _codec_provider(index, args.split)
    log_cb = (lambda s, l: print(f"step {s}: loss {l:.5f}")) if args.verbose else None
    codec, history = train_codec(provider, total, steps=args.steps, lr=args.lr,
                                 batch=args.batch, seed=args.seed, log_cb=log_cb)
    save_codec(codec, out)
    if args.log:
        with open(_claim_file(args.log, args.force), "w") as f:
            f.write("step,loss\n")
            f.writelines(f"{s},{l:.6f}\n" for s, l in history)
    write_manifest(out, "train codec", args, started,
                   checkpoints={"codec": out}, outputs=[out])
    print(f"codec: {args.steps} steps -> {out}")
    return 0


def _stage_config(args, stage: str) -> TrainConfig:
    """Config file first, then flag overrides, then stage defaults."""
    if args.config:
        cfg = parse_train_config(args.config)
        if cfg.stage != stage:
            raise UsageError(f"config stage {cfg.stage!r} does not match "
                             f"the {stage!r} subcommand")
    else:
        cfg = TrainConfig(stage=stage, steps=STAGE_STEPS.get(stage, 5000))
    overrides = {}
    for field in ("steps", "batch_size", "lr", "seed", "warmup_steps",
                  "lambda_lower", "pixel_loss"):
        v = getattr(args, field, None)
        if v is not None:
            overrides[field] = v
    from dataclasses import replace
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train_stage(args) -> int:
    started = _now()
    stage = {"keyframe": "keyframe", "interp": "interpolation",
             "reduced": "reduced", "ar": "ar"}[args.which]
    out = _claim_file(_ckpt_path(args.out, for_write=True), args.force)
    index = DatasetIndex(_data_dir(args))
    codec = load_codec(_ckpt_path(args.codec))
    log_cb = (lambda s, l: print(f"step {s}: loss {l:.5f}")) if args.verbose else None
    if stage == "reduced":
        main_cfg = _stage_config(args, "interpolation")
        if args.main_steps is not None:
            from dataclasses import replace
            main_cfg = replace(main_cfg, steps=args.main_steps)
        model, _ = train_reduced(main_cfg, index, codec, split=args.split,
                                 ckpt_path=out, log_path=args.log,
                                 log_cb=log_cb)
        steps_run = max(1, main_cfg.steps // 16)
    else:
        cfg = _stage_config(args, stage)
        model, _ = train_stage(cfg, index, codec, split=args.split,
                               ckpt_path=out, log_path=args.log, log_cb=log_cb)
        steps_run = cfg.steps
    save_denoiser(model, out)
    write_manifest(out, f"train {args.which}", args, started,
                   checkpoints={args.which: out, "codec": args.codec},
                   outputs=[out])
    print(f"{args.which}: {steps_run} steps -> {out}")
    return 0


def cmd_train_metric(args) -> int:
    started = _now()
    out = _claim_file(_ckpt_path(args.out, for_write=True), args.force)
    index = DatasetIndex(_data_dir(args))
    log_cb = (lambda s, l: print(f"step {s}: loss {l:.5f}")) if args.verbose else None
    kw = dict(split=args.split, steps=args.steps, batch=args.batch,
              lr=args.lr, seed=args.seed, log_cb=log_cb)
    if args.which == "lipreader":
        model = train_lipreader(index, **kw)
        save_lipreader(model, out)
        note = f"val R^2 {lipreader_r2(model, index, split='val'):.4f}" \
            if index.entries("val") else ""
    elif args.which == "nsv":
        model = train_nsv_classifier(index, **kw)
        save_nsv(model, out)
        note = ""
    else:
        model = train_emotion_regressor(index, **kw)
        save_emotion(model, out)
        note = ""
    write_manifest(out, f"train {args.which}", args, started,
                   checkpoints={args.which: out}, outputs=[out])
    print(f"{args.which}: {args.steps} steps -> {out}" + (f" ({note})" if note else ""))
    return 0


# ---------------------------------------------------------------------------
# generation


def _guidance_pair(args, reduced_interp, reduced_kf) -> tuple:
    w = dict(w_id=args.w_id if args.w_id is not None else DEFAULT_W_ID,
             w_aud=args.w_aud if args.w_aud is not None else DEFAULT_W_AUD,
             w_auto=args.w_auto if args.w_auto is not None else DEFAULT_W_AUTO)
    interp_kind = args.interp_guidance
    if interp_kind is None:
        interp_kind = "autoguidance" if reduced_interp is not None else "none"

    def spec(kind, reduced):
        if kind == "autoguidance":
            if reduced is None:
                raise UsageError(f"{kind} needs a reduced-model checkpoint")
            return GuidanceSpec(kind=kind, reduced_model=ablate_mod.reduced_fn(reduced), **w)
        return GuidanceSpec(kind=kind, **w)

    return spec(args.kf_guidance, reduced_kf), spec(interp_kind, reduced_interp)


def _largest_valid_total(n: int, s_gap: int) -> int:
    k = (n + s_gap) // (s_gap + 1)
    if k < 2:
        raise ValueError(f"clip too short for s_gap={s_gap}")
    return k * (s_gap + 1) - s_gap


def cmd_generate(args) -> int:
    started = _now()
    out = _claim_dir(args.out, args.force)
    if (args.audio_from_clip is None) == (args.duration is None):
        raise UsageError("pass exactly one of --audio-from-clip / --duration")

    codec = load_codec(_ckpt_path(args.codec))
    kf_model = load_denoiser(_ckpt_path(args.keyframe))
    ckpts = {"codec": args.codec, "keyframe": args.keyframe}
    extra = {}

    if args.audio_from_clip:
        index = DatasetIndex(_data_dir(args))
        cid = args.audio_from_clip
        entry = index.by_id[cid]
        a_w, a_b = index.load_audio(cid)
        total = args.frames or _largest_valid_total(entry["n_frames"], args.s_gap)
        clip_curve = EmotionCurve([tuple(k) for k in entry["emotion_keypoints"]])
        id_default = torch.from_numpy(index.load_frame(cid, 0))
        extra["source_clip"] = cid
    else:
        synth = render_clip(args.seed, args.duration,
                            emotion_curve=random_emotion_curve(
                                np.random.default_rng([args.seed, 101]),
                                args.duration))
        a_w, a_b = synth.audio_w, synth.audio_b
        total = args.frames or int(round(args.duration * FPS))
        clip_curve = EmotionCurve([(0.0, float(synth.valence[0]), float(synth.arousal[0])),
                                   (args.duration, float(synth.valence[-1]),
                                    float(synth.arousal[-1]))])
        id_default = torch.from_numpy(synth.frames[0])
        extra["synthetic_audio_seed"] = args.seed

    if args.emotion_curve:
        keypoints = [tuple(k) for k in json.loads(Path(args.emotion_curve).read_text())]
        curve = EmotionCurve(keypoints)
    elif args.no_emotion:
        curve = None
    else:
        curve = clip_curve

    if args.id_frame:
        if args.id_frame.startswith("clip:"):
            index = DatasetIndex(_data_dir(args))
            _, cid, *rest = args.id_frame.split(":")
            id_frame = torch.from_numpy(index.load_frame(cid, int(rest[0]) if rest else 0))
        else:
            id_frame = torch.from_numpy(load_frame_png(args.id_frame))
    else:
        id_frame = id_default

    audio = fuse_audio(torch.from_numpy(np.asarray(a_w, dtype=np.float32)),
                       torch.from_numpy(np.asarray(a_b, dtype=np.float32)))
    if audio.shape[0] < total:
        raise ValueError(f"audio covers {audio.shape[0]} frames < {total}")
    audio = audio[:total]

    reduced_interp = load_denoiser(_ckpt_path(args.reduced)) if args.reduced else None
    reduced_kf = load_denoiser(_ckpt_path(args.reduced_kf)) if args.reduced_kf else None
    if args.reduced:
        ckpts["reduced"] = args.reduced
    if args.reduced_kf:
        ckpts["reduced_kf"] = args.reduced_kf
    kf_spec, interp_spec = _guidance_pair(args, reduced_interp, reduced_kf)

    if args.baseline == "autoregressive":
        if not args.ar:
            raise UsageError("--baseline autoregressive needs --ar CKPT")
        ar_model = load_denoiser(_ckpt_path(args.ar))
        ckpts["ar"] = args.ar
        result = autoregressive_baseline(kf_model, ar_model, codec, audio,
                                         id_frame, window=args.t_keyframes,
                                         overlap=args.overlap,
                                         guidance=(kf_spec, interp_spec),
                                         seed=args.seed, n_steps=args.steps_sample)
    else:
        if not args.interp:
            raise UsageError("two-stage generation needs --interp CKPT")
        interp_model = load_denoiser(_ckpt_path(args.interp))
        ckpts["interp"] = args.interp
        plan = plan_generation(total, t_keyframes=args.t_keyframes,
                               s_gap=args.s_gap, emotion_curve=curve,
                               guidance=(kf_spec, interp_spec), seed=args.seed)
        result = generate_long_video(kf_model, interp_model, codec, audio,
                                     id_frame, plan, n_steps=args.steps_sample)
    result.extra.update(extra)
    save_generation(out, result,
                    checkpoints={k: str(v) for k, v in ckpts.items()},
                    save_latents=args.save_latents)
    write_manifest(out, "generate", args, started,
                   checkpoints={k: _ckpt_path(v) for k, v in ckpts.items()},
                   outputs=[out / "frames", out / "generation.json"])
    print(f"generated {result.frames.shape[0]} frames -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluation


def _gen_subdirs(parent) -> list:
    parent = Path(parent)
    if (parent / "frames").is_dir():
        return [parent]
    subs = sorted(d for d in parent.iterdir()
                  if d.is_dir() and (d / "frames").is_dir())
    if not subs:
        raise ValueError(f"no generation outputs under {parent}")
    return subs


def cmd_eval_lipscore(args) -> int:
    started = _now()
    lip = load_lipreader(_ckpt_path(args.lipreader))
    gen = _load_frames_dir(args.gen)
    ref = _resolve_frames(args.ref, args)
    if ref.shape[0] > gen.shape[0]:
        ref = ref[:gen.shape[0]]
    score = lipscore(torch.from_numpy(gen), torch.from_numpy(ref), lip)
    out = _claim_file(args.out or Path(args.gen) / "lipscore.json", args.force)
    out.write_text(json.dumps({"lipscore": score, "n_frames": int(gen.shape[0])},
                              indent=2, sort_keys=True))
    write_manifest(out, "eval lipscore", args, started,
                   checkpoints={"lipreader": _ckpt_path(args.lipreader)},
                   outputs=[out])
    print(f"lipscore {score:.4f} -> {out}")
    return 0


def cmd_eval_fid_drift(args) -> int:
    started = _now()
    nsv = load_nsv(_ckpt_path(args.nsv))
    out = _claim_dir(args.out, args.force)
    gen_clips = [_load_frames_dir(d) for d in _gen_subdirs(args.gen)]
    index = DatasetIndex(_data_dir(args))
    refs = [c["id"] for c in index.entries(args.ref_split)]
    if not refs:
        raise ValueError(f"no clips in split {args.ref_split!r}")
    real_clips = [index.load_frames(c) for c in refs]
    result = sliding_fid(gen_clips, real_clips, ablate_mod.nsv_extractor(nsv),
                         window_sec=args.window)
    save_sliding_csv(out / "fid_drift.csv", result)
    (out / "report.json").write_text(json.dumps(
        {"slope": result.slope, "windows": len(result.series)},
        indent=2, sort_keys=True))
    write_manifest(out, "eval fid-drift", args, started,
                   checkpoints={"nsv": _ckpt_path(args.nsv)},
                   outputs=[out / "fid_drift.csv", out / "report.json"])
    print(f"fid drift slope {result.slope:.5f} over {len(result.series)} "
          f"windows -> {out}")
    return 0


def _intended_labels(dirs, args) -> list:
    if args.labels:
        table = {}
        with open(args.labels) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("dir,"):
                    continue
                d, _, label = line.partition(",")
                table[d.strip()] = label.strip()
        return [table[d.name] for d in dirs]
    index = DatasetIndex(_data_dir(args))
    labels = []
    for d in dirs:
        meta = json.loads((d / "generation.json").read_text())
        src = meta.get("source_clip")
        if not src:
            raise ValueError(f"{d} has no source_clip; pass --labels")
        labels.append(index.by_id[src]["nsv_label"])
    return labels


def cmd_eval_nsv(args) -> int:
    started = _now()
    model = load_nsv(_ckpt_path(args.nsv))
    out = _claim_dir(args.out, args.force)
    dirs = _gen_subdirs(args.gen)
    clips = [_load_frames_dir(d) for d in dirs]
    labels = _intended_labels(dirs, args)
    acc, confusion = nsv_accuracy(model, clips, labels)
    save_confusion_csv(out / "confusion.csv", confusion)
    (out / "report.json").write_text(json.dumps(
        {"accuracy": acc, "macro_f1": macro_f1(confusion), "n_clips": len(dirs)},
        indent=2, sort_keys=True))
    write_manifest(out, "eval nsv", args, started,
                   checkpoints={"nsv": _ckpt_path(args.nsv)},
                   outputs=[out / "confusion.csv", out / "report.json"])
    print(f"nsv accuracy {acc:.4f} over {len(dirs)} clips -> {out}")
    return 0


def cmd_eval_emotion(args) -> int:
    started = _now()
    model = load_emotion(_ckpt_path(args.emotion))
    out = _claim_dir(args.out, args.force)
    dirs = _gen_subdirs(args.gen)
    clips, intended = [], []
    for d in dirs:
        frames = _load_frames_dir(d)
        meta = json.loads((d / "generation.json").read_text())
        keypoints = (meta.get("plan") or {}).get("emotion_curve")
        if not keypoints:
            raise ValueError(f"{d} was generated without an emotion curve")
        curve = EmotionCurve([tuple(k) for k in keypoints])
        v, a = sample_emotion_curve(curve, np.arange(frames.shape[0]))
        clips.append(frames)
        intended.append(np.stack([v, a], axis=1).astype(np.float32))
    acc = emotion_accuracy(model, clips, intended)
    (out / "report.json").write_text(json.dumps(
        {"accuracy": acc, "n_clips": len(dirs)}, indent=2, sort_keys=True))
    write_manifest(out, "eval emotion", args, started,
                   checkpoints={"emotion": _ckpt_path(args.emotion)},
                   outputs=[out / "report.json"])
    print(f"emotion accuracy {acc:.4f} over {len(dirs)} clips -> {out}")
    return 0


# ---------------------------------------------------------------------------
# perturbation, arena, ablations, plots


def cmd_perturb(args) -> int:
    started = _now()
    lip = load_lipreader(_ckpt_path(args.lipreader))
    frames = _resolve_frames(args.clip, args)
    kind = {"time": "time_shift", "hshift": "h_shift", "rotate": "rotate"}[args.kind]
    if args.grid:
        grid = _parse_grid(args.grid)
    else:
        grid = {"time_shift": list(TIME_GRID_MS),
                "h_shift": [0, 2, 4, 6, 8],
                "rotate": [0, 5, 10, 15, 20]}[kind]

    def metric(gen, ref):
        return lipscore(torch.from_numpy(np.ascontiguousarray(gen)),
                        torch.from_numpy(np.ascontiguousarray(ref)), lip)

    rows = perturbation_harness(metric, frames, kind, grid)
    out = _claim_file(args.out, args.force)
    level_name = {"time_shift": "ms", "h_shift": "px", "rotate": "deg"}[kind]
    save_curve_csv(out, rows, level_name=level_name)
    write_manifest(out, "perturb", args, started,
                   checkpoints={"lipreader": _ckpt_path(args.lipreader)},
                   outputs=[out])
    print(f"{kind} curve over {len(rows)} levels -> {out}")
    return 0


def cmd_arena(args) -> int:
    started = _now()
    matches = load_matches_csv(args.matches)
    out = _claim_dir(args.out, args.force)
    report = bootstrap_elo(matches, n_rounds=args.bootstrap, k=args.k,
                           seed=args.seed)
    save_report(report, out)
    write_manifest(out, "arena", args, started,
                   outputs=[out / "report.json", out / "winrate.csv",
                            out / "elo_samples.csv"])
    ranked = sorted(report.ratings, key=report.ratings.get, reverse=True)
    print("elo:", ", ".join(f"{m}={report.ratings[m]:.0f}" for m in ranked))
    return 0


def cmd_ablate(args) -> int:
    started = _now()
    out = _claim_file(args.out, args.force)
    index = DatasetIndex(_data_dir(args))
    codec = load_codec(_ckpt_path(args.codec))
    lip = load_lipreader(_ckpt_path(args.lipreader))
    nsv = load_nsv(_ckpt_path(args.nsv))
    clips = [c["id"] for c in index.entries(args.eval_split)][:args.eval_clips]
    if not clips:
        raise ValueError(f"no clips in split {args.eval_split!r}")
    log_cb = print if args.verbose else None
    kw = dict(n_steps=args.steps_sample, seed=args.seed, log_cb=log_cb)
    ckpts = {"codec": args.codec, "lipreader": args.lipreader, "nsv": args.nsv}
    if args.which == "guidance":
        for flag in ("keyframe", "interp", "reduced"):
            if not getattr(args, flag):
                raise UsageError(f"ablate guidance needs --{flag}")
        kf = load_denoiser(_ckpt_path(args.keyframe))
        it = load_denoiser(_ckpt_path(args.interp))
        red = load_denoiser(_ckpt_path(args.reduced))
        red_kf = load_denoiser(_ckpt_path(args.reduced_kf)) if args.reduced_kf else None
        ckpts.update(keyframe=args.keyframe, interp=args.interp,
                     reduced=args.reduced)
        rows = ablate_mod.ablate_guidance(index, codec, lip, nsv, clips, kf, it,
                                          red, reduced_kf=red_kf,
                                          kf_steps_main=args.main_kf_steps, **kw)
    else:
        fn = {"audio-mech": ablate_mod.ablate_audio_mech,
              "loss": ablate_mod.ablate_loss,
              "temporal": ablate_mod.ablate_temporal}[args.which]
        rows = fn(index, codec, lip, nsv, clips, kf_steps=args.kf_steps,
                  interp_steps=args.interp_steps, **kw)
    ablate_mod.save_table_csv(out, rows)
    write_manifest(out, f"ablate {args.which}", args, started,
                   checkpoints={k: _ckpt_path(v) for k, v in ckpts.items()},
                   outputs=[out])
    print(f"{args.which} table ({len(rows)} rows) -> {out}")
    return 0


def cmd_plot(args) -> int:
    out = plot_report(args.report, args.out)
    print(f"plot -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common_train_flags(p, default_steps=None, default_batch=None,
                            default_lr=None):
    p.add_argument("--data", help="dataset root (or $KFLAB_DATA_DIR)")
    p.add_argument("--split", default="train")
    p.add_argument("--steps", type=int, default=default_steps)
    p.add_argument("--batch", type=int, default=default_batch)
    p.add_argument("--lr", type=float, default=default_lr)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="training-log CSV path")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--force", action="store_true")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kflab",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset building")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    b = ds_sub.add_parser("build", help="render a synthetic dataset")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--mix", help="class mix, e.g. speech=0.5,laughter=0.2")
    b.add_argument("--splits", default="0.8,0.1,0.1")
    b.add_argument("--duration", type=float, default=7.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--force", action="store_true")
    b.add_argument("--verbose", action="store_true")
    b.set_defaults(func=cmd_dataset_build)

    tr = sub.add_parser("train", help="train a model")
    tr_sub = tr.add_subparsers(dest="train_command", required=True)
    c = tr_sub.add_parser("codec", help="frame autoencoder")
    _add_common_train_flags(c, default_steps=2000, default_batch=32,
                            default_lr=2e-3)
    c.set_defaults(func=cmd_train_codec)
    for which in ("keyframe", "interp", "reduced", "ar"):
        t = tr_sub.add_parser(which)
        t.add_argument("--codec", required=True)
        t.add_argument("--config", help="flat key=value training config file")
        t.add_argument("--warmup-steps", dest="warmup_steps", type=int)
        t.add_argument("--batch-size", dest="batch_size", type=int)
        t.add_argument("--lambda-lower", dest="lambda_lower", type=float)
        t.add_argument("--pixel-loss", dest="pixel_loss")
        if which == "reduced":
            t.add_argument("--main-steps", dest="main_steps", type=int,
                           default=None,
                           help="main interpolation steps; reduced runs /16")
        p_common = dict(default_steps=None, default_batch=None, default_lr=None)
        _add_common_train_flags(t, **p_common)
        t.set_defaults(func=cmd_train_stage, which=which)
    for which in ("lipreader", "nsv", "emotion"):
        t = tr_sub.add_parser(which)
        defaults = {"lipreader": (2500, 64, 1e-3), "nsv": (1500, 8, 1e-3),
                    "emotion": (2000, 32, 2e-3)}[which]
        _add_common_train_flags(t, default_steps=defaults[0],
                                default_batch=defaults[1], default_lr=defaults[2])
        t.set_defaults(func=cmd_train_metric, which=which)

    g = sub.add_parser("generate", help="generate a clip")
    g.add_argument("--data")
    g.add_argument("--codec", required=True)
    g.add_argument("--keyframe", required=True)
    g.add_argument("--interp")
    g.add_argument("--reduced", help="reduced interpolation twin (autoguidance)")
    g.add_argument("--reduced-kf", dest="reduced_kf")
    g.add_argument("--baseline", choices=["autoregressive"])
    g.add_argument("--ar", help="autoregressive-window model checkpoint")
    g.add_argument("--audio-from-clip", dest="audio_from_clip")
    g.add_argument("--duration", type=float)
    g.add_argument("--frames", type=int, help="explicit total frame count")
    g.add_argument("--id-frame", dest="id_frame",
                   help="PNG path or clip:<id>[:<frame>]")
    g.add_argument("--emotion-curve", dest="emotion_curve",
                   help="JSON [[t_sec, valence, arousal], ...]")
    g.add_argument("--no-emotion", dest="no_emotion", action="store_true")
    g.add_argument("--t-keyframes", dest="t_keyframes", type=int,
                   default=KEYFRAMES_PER_SEGMENT)
    g.add_argument("--s-gap", dest="s_gap", type=int, default=GAP_FRAMES)
    g.add_argument("--overlap", type=int, default=2,
                   help="clean left frames per autoregressive window")
    g.add_argument("--kf-guidance", dest="kf_guidance", choices=GUIDANCE_KINDS,
                   default="split_cfg")
    g.add_argument("--interp-guidance", dest="interp_guidance",
                   choices=GUIDANCE_KINDS, default=None)
    g.add_argument("--w-id", dest="w_id", type=float)
    g.add_argument("--w-aud", dest="w_aud", type=float)
    g.add_argument("--w-auto", dest="w_auto", type=float)
    g.add_argument("--steps-sample", dest="steps_sample", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--save-latents", dest="save_latents", action="store_true")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    ev = sub.add_parser("eval", help="evaluate generated clips")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    e = ev_sub.add_parser("lipscore")
    e.add_argument("--gen", required=True, help="generated frames directory")
    e.add_argument("--ref", required=True, help="directory or clip:<id>")
    e.add_argument("--lipreader", required=True)
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval_lipscore)
    e = ev_sub.add_parser("fid-drift")
    e.add_argument("--gen", required=True, help="directory of generations")
    e.add_argument("--ref-split", dest="ref_split", default="val")
    e.add_argument("--window", type=float, default=1.0)
    e.add_argument("--nsv", required=True)
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval_fid_drift)
    e = ev_sub.add_parser("nsv")
    e.add_argument("--gen", required=True)
    e.add_argument("--labels", help="CSV dir,label when source_clip is absent")
    e.add_argument("--nsv", required=True)
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval_nsv)
    e = ev_sub.add_parser("emotion")
    e.add_argument("--gen", required=True)
    e.add_argument("--emotion", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval_emotion)

    p = sub.add_parser("perturb", help="metric robustness curves")
    p.add_argument("--metric", choices=["lipscore"], default="lipscore")
    p.add_argument("--kind", choices=["time", "hshift", "rotate"], required=True)
    p.add_argument("--grid", help="comma-separated levels")
    p.add_argument("--clip", required=True, help="directory or clip:<id>")
    p.add_argument("--lipreader", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_perturb)

    a = sub.add_parser("arena", help="Elo bootstrap over a match file")
    a.add_argument("--matches", required=True)
    a.add_argument("--bootstrap", type=int, default=1000)
    a.add_argument("--k", type=float, default=32.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.add_argument("--force", action="store_true")
    a.set_defaults(func=cmd_arena)

    ab = sub.add_parser("ablate", help="emit one ablation table")
    ab_sub = ab.add_subparsers(dest="ablate_command", required=True)
    for which in ("audio-mech", "loss", "guidance", "temporal"):
        t = ab_sub.add_parser(which)
        t.add_argument("--data")
        t.add_argument("--codec", required=True)
        t.add_argument("--lipreader", required=True)
        t.add_argument("--nsv", required=True)
        t.add_argument("--eval-split", dest="eval_split", default="val")
        t.add_argument("--eval-clips", dest="eval_clips", type=int, default=8)
        t.add_argument("--steps-sample", dest="steps_sample", type=int, default=10)
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--out", required=True)
        t.add_argument("--force", action="store_true")
        t.add_argument("--verbose", action="store_true")
        if which == "guidance":
            t.add_argument("--keyframe")
            t.add_argument("--interp")
            t.add_argument("--reduced")
            t.add_argument("--reduced-kf", dest="reduced_kf")
            t.add_argument("--main-kf-steps", dest="main_kf_steps", type=int,
                           default=5000)
        else:
            t.add_argument("--kf-steps", dest="kf_steps", type=int,
                           default=ablate_mod.ABLATION_KF_STEPS)
            t.add_argument("--interp-steps", dest="interp_steps", type=int,
                           default=ablate_mod.ABLATION_INTERP_STEPS)
        t.set_defaults(func=cmd_ablate, which=which)

    pl = sub.add_parser("plot", help="render a report file to SVG")
    pl.add_argument("report")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
