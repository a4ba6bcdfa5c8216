"""Inference orchestration: keyframes, gap interpolation, segment chaining,
and the autoregressive baseline used for drift comparisons.

A generation covers total = K + (K-1)*S frames with K keyframes spaced S+1
frame indices apart. Keyframes are sampled per segment of at most T; adjacent
segments share their boundary keyframe bit-exactly (assigned, never
regenerated). Each gap is then interpolated independently with its own
derived seed, so gaps could run concurrently without changing the result.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import FPS, GAP_FRAMES, KEYFRAMES_PER_SEGMENT, LATENT_CHANNELS
from .conditioning import ConditionBundle
from .diffusion import N_SAMPLE_STEPS, build_schedule, denoise, euler_sample
from .guidance import GuidanceSpec, guided_denoiser
from .synthworld import EmotionCurve, frames_to_uint8


@dataclass
class GenerationPlan:
    total_frames: int
    t_keyframes: int = KEYFRAMES_PER_SEGMENT
    s_gap: int = GAP_FRAMES
    segments: list = field(default_factory=list)  # inclusive keyframe-index ranges
    emotion_curve: EmotionCurve | None = None
    guidance: tuple = ()  # (keyframe spec, interpolation spec)
    seed: int = 0

    def __post_init__(self):
        if not self.guidance:
            self.guidance = (GuidanceSpec("split_cfg"), GuidanceSpec("none"))
        if len(self.guidance) != 2:
            raise ValueError("guidance must be a (keyframe, interpolation) pair")
        k = self.n_keyframes
        if k < 2:
            raise ValueError("need at least 2 keyframes")
        if self.total_frames != k + (k - 1) * self.s_gap:
            raise ValueError(
                f"total_frames {self.total_frames} != {k} + {k - 1}*{self.s_gap}")
        if self.segments[0][0] != 0:
            raise ValueError("segments must start at keyframe 0")
        for (a, b), nxt in zip(self.segments, self.segments[1:]):
            if nxt[0] != b:
                raise ValueError("adjacent segments must share a boundary keyframe")
        for a, b in self.segments:
            if not 1 <= b - a <= self.t_keyframes - 1:
                raise ValueError("segment length out of range")

    @property
    def n_keyframes(self) -> int:
        return self.segments[-1][1] + 1 if self.segments else 0

    def keyframe_rows(self) -> np.ndarray:
        """Frame index of each keyframe: k * (S+1)."""
        return np.arange(self.n_keyframes) * (self.s_gap + 1)


def plan_generation(total_frames: int, t_keyframes: int = KEYFRAMES_PER_SEGMENT,
                    s_gap: int = GAP_FRAMES, emotion_curve=None, guidance=(),
                    seed: int = 0) -> GenerationPlan:
    """Solve total = K + (K-1)*S for K and tile segments of at most T."""
    if t_keyframes < 2 or s_gap < 1:
        raise ValueError("need t_keyframes >= 2 and s_gap >= 1")
    stride = s_gap + 1
    if (total_frames + s_gap) % stride:
        lo = (total_frames + s_gap) // stride
        raise ValueError(
            f"no keyframe count gives {total_frames} frames with S={s_gap}; "
            f"nearest valid totals are {lo * stride - s_gap} and {(lo + 1) * stride - s_gap}")
    k = (total_frames + s_gap) // stride
    if k < 2:
        raise ValueError("need at least 2 keyframes; increase total_frames")
    segments, a = [], 0
    while a < k - 1:
        b = min(a + t_keyframes - 1, k - 1)
        segments.append((a, b))
        a = b
    if not guidance:
        guidance = (GuidanceSpec("split_cfg"), GuidanceSpec("none"))
    return GenerationPlan(total_frames=total_frames, t_keyframes=t_keyframes,
                          s_gap=s_gap, segments=segments,
                          emotion_curve=emotion_curve, guidance=guidance,
                          seed=seed)


def derive_seed(seed: int, *parts) -> int:
    """Stable per-stage seed; parts may be strings or ints."""
    ints = [seed] + [int.from_bytes(str(p).encode(), "little") % (2 ** 32)
                     if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1, dtype=np.uint64)[0])


def _init_noise(shape, seed: int, sigma_max: float) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed % (2 ** 63))
    return sigma_max * torch.randn(shape, generator=g)


def sample_emotion_curve(curve: EmotionCurve, frame_idx, fps: int = FPS):
    """Piecewise-linear (v, a) at arbitrary frame indices, clamped outside."""
    t = np.asarray(frame_idx, dtype=np.float64) / fps
    times = np.array([k[0] for k in curve.keypoints])
    vs = np.array([k[1] for k in curve.keypoints])
    ars = np.array([k[2] for k in curve.keypoints])
    return np.interp(t, times, vs), np.interp(t, times, ars)


def _emotion_tensors(curve, frame_rows):
    if curve is None:
        return None, None
    v, a = sample_emotion_curve(curve, frame_rows)
    return (torch.from_numpy(v.astype(np.float32)).clamp(-1, 1),
            torch.from_numpy(a.astype(np.float32)).clamp(-1, 1))


def generate_keyframes(model, audio_rows: torch.Tensor, id_latent: torch.Tensor,
                       emotions, spec: GuidanceSpec, seed: int = 0,
                       n_steps: int = N_SAMPLE_STEPS, noise=None) -> torch.Tensor:
    """One guided sampling run over a [C, T, h, w] keyframe volume.

    audio_rows holds one fused row per keyframe (already subsampled at the
    keyframe positions); emotions is a (valence, arousal) pair of per-keyframe
    tracks or None.
    """
    t = audio_rows.shape[0]
    v, a = emotions if emotions is not None else (None, None)
    cond = ConditionBundle(audio=audio_rows, id_latent=id_latent,
                           valence=v, arousal=a)
    schedule = build_schedule(n_steps)
    fn = guided_denoiser(lambda x, s, c: denoise(model, x, s, c), spec)
    h, w = id_latent.shape[-2:]
    if noise is None:
        noise = _init_noise((LATENT_CHANNELS, t, h, w), seed, float(schedule.sigmas[0]))
    return euler_sample(fn, noise, schedule, cond)


def interpolate_gap(model, z_s: torch.Tensor, z_e: torch.Tensor,
                    audio_window: torch.Tensor, spec: GuidanceSpec,
                    seed: int = 0, n_steps: int = N_SAMPLE_STEPS,
                    noise=None) -> torch.Tensor:
    """Guided sampling over one masked window; returns the S interior frames."""
    n = audio_window.shape[0]
    cond = ConditionBundle(audio=audio_window, endpoints=(z_s, z_e))
    schedule = build_schedule(n_steps)
    fn = guided_denoiser(lambda x, s, c: denoise(model, x, s, c), spec)
    if noise is None:
        noise = _init_noise((z_s.shape[-3], n) + z_s.shape[-2:], seed,
                            float(schedule.sigmas[0]))
    out = euler_sample(fn, noise, schedule, cond)
    return out[:, 1:-1]


@dataclass
class GenerationResult:
    frames: torch.Tensor   # [L, 3, H, W] in [0, 1]
    latents: torch.Tensor  # [L, C, h, w]
    plan: GenerationPlan | None  # None for the autoregressive baseline
    timings: dict
    extra: dict = field(default_factory=dict)


@torch.no_grad()
def generate_long_video(kf_model, interp_model, codec, audio: torch.Tensor,
                        id_frame: torch.Tensor, plan: GenerationPlan,
                        emotion_curve=None, n_steps: int = N_SAMPLE_STEPS) -> GenerationResult:
    """Chained generation: keyframes per segment, then every gap, then decode.

    audio is the full-rate fused feature track covering plan.total_frames
    rows; id_frame is one [3, H, W] pixel frame. Output length is exactly
    plan.total_frames.
    """
    if audio.shape[0] < plan.total_frames:
        raise ValueError(f"audio covers {audio.shape[0]} frames, "
                         f"plan needs {plan.total_frames}")
    curve = emotion_curve if emotion_curve is not None else plan.emotion_curve
    kf_spec, gap_spec = plan.guidance
    id_latent = codec.encode(id_frame)
    rows = plan.keyframe_rows()
    stride = plan.s_gap + 1
    timings = {}

    t0 = time.perf_counter()
    kf_latents = [None] * plan.n_keyframes
    for si, (a, b) in enumerate(plan.segments):
        seg_rows = rows[a:b + 1]
        try:
            out = generate_keyframes(
                kf_model, audio[seg_rows], id_latent,
                _emotion_tensors(curve, seg_rows), kf_spec,
                seed=derive_seed(plan.seed, "segment", si), n_steps=n_steps)
        except Exception as e:
            raise RuntimeError(f"keyframe segment {si} (keyframes {a}..{b}) failed") from e
        for j, k in enumerate(range(a, b + 1)):
            if kf_latents[k] is None:  # boundary keyframe stays shared, never regenerated
                kf_latents[k] = out[:, j]
    timings["keyframes_sec"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    h, w = id_latent.shape[-2:]
    latents = torch.zeros(plan.total_frames, LATENT_CHANNELS, h, w)
    for k, row in enumerate(rows):
        latents[row] = kf_latents[k]
    for gap in range(plan.n_keyframes - 1):
        lo = gap * stride
        try:
            interior = interpolate_gap(
                interp_model, kf_latents[gap], kf_latents[gap + 1],
                audio[lo:lo + stride + 1], gap_spec,
                seed=derive_seed(plan.seed, "gap", gap), n_steps=n_steps)
        except Exception as e:
            raise RuntimeError(f"gap {gap} (frames {lo}..{lo + stride}) failed") from e
        latents[lo + 1:lo + stride] = interior.transpose(0, 1)
    timings["interpolation_sec"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    frames = torch.cat([codec.decode(latents[i:i + 64])
                        for i in range(0, plan.total_frames, 64)])
    timings["decode_sec"] = time.perf_counter() - t0
    return GenerationResult(frames=frames, latents=latents, plan=plan,
                            timings=timings)


@torch.no_grad()
def autoregressive_baseline(kf_model, ar_model, codec, audio: torch.Tensor,
                            id_frame: torch.Tensor, window: int = KEYFRAMES_PER_SEGMENT,
                            overlap: int = 2, guidance: tuple = (), seed: int = 0,
                            n_steps: int = N_SAMPLE_STEPS) -> GenerationResult:
    """Sliding-window baseline embodying the error-accumulation failure mode.

    The first window is a plain keyframe-model run over consecutive frames
    (neutral emotion); every later window conditions on the last `overlap`
    already-generated latents through a left-only mask. Total length is
    len(audio) rows.
    """
    if not 0 < overlap < window:
        raise ValueError("need 0 < overlap < window")
    total = audio.shape[0]
    if total < window:
        raise ValueError("audio shorter than one window")
    if not guidance:
        guidance = (GuidanceSpec("split_cfg"), GuidanceSpec("none"))
    kf_spec, ar_spec = guidance
    id_latent = codec.encode(id_frame)
    h, w = id_latent.shape[-2:]
    schedule = build_schedule(n_steps)
    fn = guided_denoiser(lambda x, s, c: denoise(ar_model, x, s, c), ar_spec)
    timings = {}

    t0 = time.perf_counter()
    neutral = (torch.zeros(window), torch.zeros(window))
    latents = torch.zeros(total, LATENT_CHANNELS, h, w)
    first = generate_keyframes(kf_model, audio[:window], id_latent, neutral,
                               kf_spec, seed=derive_seed(seed, "window", 0),
                               n_steps=n_steps)
    latents[:window] = first.transpose(0, 1)
    done = window
    widx = 1
    while done < total:
        start = min(done - overlap, total - window)
        left = tuple(latents[start + i].clone() for i in range(overlap))
        cond = ConditionBundle(audio=audio[start:start + window], endpoints=left)
        noise = _init_noise((LATENT_CHANNELS, window, h, w),
                            derive_seed(seed, "window", widx),
                            float(schedule.sigmas[0]))
        try:
            out = euler_sample(fn, noise, schedule, cond)
        except Exception as e:
            raise RuntimeError(f"autoregressive window {widx} "
                               f"(frames {start}..{start + window - 1}) failed") from e
        new_lo = done - start
        latents[done:start + window] = out[:, new_lo:].transpose(0, 1)
        done = start + window
        widx += 1
    timings["windows"] = widx
    timings["generate_sec"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    frames = torch.cat([codec.decode(latents[i:i + 64])
                        for i in range(0, total, 64)])
    timings["decode_sec"] = time.perf_counter() - t0
    extra = {"baseline": "autoregressive", "window": window, "overlap": overlap,
             "seed": seed, "total_frames": total}
    return GenerationResult(frames=frames, latents=latents, plan=None,
                            timings=timings, extra=extra)


def plan_to_dict(plan: GenerationPlan) -> dict:
    d = {"total_frames": plan.total_frames, "t_keyframes": plan.t_keyframes,
         "s_gap": plan.s_gap, "segments": [list(s) for s in plan.segments],
         "seed": plan.seed,
         "guidance": [{"kind": g.kind, "w_id": g.w_id, "w_aud": g.w_aud,
                       "w_auto": g.w_auto} for g in plan.guidance]}
    if plan.emotion_curve is not None:
        d["emotion_curve"] = [list(k) for k in plan.emotion_curve.keypoints]
    return d


def save_generation(out_dir, result: GenerationResult, checkpoints: dict | None = None,
                    save_latents: bool = False) -> None:
    """PNG frame directory plus generation.json; optional raw latent dump."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    u8 = frames_to_uint8(result.frames.numpy())
    for i in range(u8.shape[0]):
        Image.fromarray(u8[i].transpose(1, 2, 0)).save(out / "frames" / f"{i:04d}.png")
    meta = {"timings": result.timings, "checkpoints": checkpoints or {},
            **result.extra}
    if result.plan is not None:
        meta["plan"] = plan_to_dict(result.plan)
    (out / "generation.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    if save_latents:
        result.latents.numpy().astype(np.float32).tofile(out / "latents.f32")
