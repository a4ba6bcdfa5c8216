"""Procedural avatar world: clips with paired audio features and exact labels.

Every clip is a 64x64 RGB rendering of a parametric 2D face at 25 fps. The
mouth aperture follows a per-frame `mouth_open` track in [0, 1], eyebrow angle
is affine in arousal, mouth curvature affine in valence, so lip sync and
emotion adherence are measurable by construction. Two per-frame audio feature
streams stand in for pretrained speech/acoustic encoders:

  audio_w  deterministic feature map of the mouth_open track (3-frame
           context): the "what is being said" stream.
  audio_b  log band magnitudes of a synthesized waveform whose carrier
           spectrum differs per vocalisation class: the "how it sounds"
           stream.

Nine classes: plain speech plus eight non-speech vocalisations, each with a
distinct canonical motion template (laughter bursts with a head bob, slow wide
yawns, sharp cough double-pulses, sighs with eye narrowing, short "mhm" /
"oh" / "ah" signatures, rapid throat-clear triple pulses).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter1d

from . import FPS, FRAME_SIZE, AUDIO_DIM

NSV_CLASSES = [
    "speech", "mhm", "oh", "ah", "cough",
    "sigh", "yawn", "throat_clear", "laughter",
]

AUDIO_MAGIC = b"KFAU"
_AUDIO_SR = 400           # synthetic waveform sample rate (Hz)
_SAMPLES_PER_FRAME = _AUDIO_SR // FPS

# Distinct carrier bands (rfft bin indices, 12.5 Hz apart) per class.
_CLASS_BANDS = {
    "speech": None,  # broadband, randomised per clip
    "laughter": (4, 9),
    "yawn": (2,),
    "cough": (11, 14),
    "sigh": (3, 6),
    "throat_clear": (10, 13),
    "mhm": (5, 12),
    "oh": (7,),
    "ah": (8, 15),
}

_MOUTH_INTERIOR = np.array([25, 12, 18], dtype=np.float32) / 255.0
_LIP_COLOR = np.array([178, 82, 92], dtype=np.float32) / 255.0
_BROW_COLOR = np.array([70, 45, 35], dtype=np.float32) / 255.0
_SCLERA = np.array([245, 245, 248], dtype=np.float32) / 255.0
_PUPIL = np.array([45, 45, 58], dtype=np.float32) / 255.0


@dataclass
class EmotionCurve:
    """Piecewise-linear (time_sec, valence, arousal) keypoints."""

    keypoints: list

    def __post_init__(self):
        if not self.keypoints:
            raise ValueError("emotion curve needs at least one keypoint")
        times = [k[0] for k in self.keypoints]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("keypoint times must be strictly increasing")
        for _, v, a in self.keypoints:
            if not (-1.0 <= v <= 1.0 and -1.0 <= a <= 1.0):
                raise ValueError("valence/arousal outside [-1, 1]")

    def sample(self, n_frames: int, fps: int = FPS):
        """Per-frame (valence, arousal) arrays; constant beyond the ends."""
        t = np.arange(n_frames) / fps
        times = np.array([k[0] for k in self.keypoints])
        vs = np.array([k[1] for k in self.keypoints])
        ars = np.array([k[2] for k in self.keypoints])
        return np.interp(t, times, vs), np.interp(t, times, ars)


@dataclass
class SynthClip:
    frames: np.ndarray       # [L, 3, 64, 64] float32 in [0, 1]
    audio_w: np.ndarray      # [L, C_a]
    audio_b: np.ndarray      # [L, C_a]
    mouth_open: np.ndarray   # [L] in [0, 1]
    valence: np.ndarray      # [L] in [-1, 1]
    arousal: np.ndarray      # [L] in [-1, 1]
    nsv_label: str
    identity_params: dict
    aux: dict = field(default_factory=dict)  # extra motion tracks, debugging only

    @property
    def n_frames(self) -> int:
        return len(self.mouth_open)


# ---------------------------------------------------------------------------
# identity + per-frame geometry


def identity_params(seed: int) -> dict:
    rng = np.random.default_rng([int(seed), 11])
    skin = np.array([rng.uniform(200, 238), rng.uniform(160, 205), rng.uniform(132, 175)]) / 255.0
    bg = np.array([rng.uniform(115, 190), rng.uniform(150, 210), rng.uniform(165, 225)]) / 255.0
    return {
        "seed": int(seed),
        "skin": skin.tolist(),
        "bg": bg.tolist(),
        "head_rx": float(rng.uniform(17.5, 21.5)),
        "head_ry": float(rng.uniform(21.0, 25.0)),
        "eye_dx": float(rng.uniform(7.0, 9.0)),
        "eye_y": float(rng.uniform(25.0, 27.5)),
        "eye_rx": float(rng.uniform(2.6, 3.4)),
        "eye_ry": float(rng.uniform(2.1, 2.7)),
        "brow_len": float(rng.uniform(6.0, 7.5)),
        "brow_base": float(rng.uniform(-4.0, 4.0)),
        "mouth_y": float(rng.uniform(43.0, 46.0)),
        "mouth_rx": float(rng.uniform(5.8, 7.2)),
        "ap_gain": float(rng.uniform(3.9, 4.7)),
    }


def face_geometry(identity: dict, mouth_open: float, valence: float, arousal: float,
                  roundness: float = 0.0, bob: float = 0.0, eye_open: float = 1.0) -> dict:
    """Numeric scene description for one frame.

    Eyebrow angle is affine in arousal and mouth curvature affine in valence
    by construction; the renderer draws exactly these numbers.
    """
    return {
        "head_cx": 32.0,
        "head_cy": 33.0 + 2.2 * bob,
        "brow_angle_deg": identity["brow_base"] + 14.0 * arousal,
        "brow_lift_px": 1.8 * arousal,
        "mouth_curve_px": 2.6 * valence,
        # roundness narrows the mouth but keeps the aperture area affine in
        # mouth_open (the lip-sync oracle depends on that)
        "mouth_rx": identity["mouth_rx"] * (1.0 - 0.38 * roundness),
        "mouth_ap_ry": (0.8 + identity["ap_gain"] * mouth_open) / (1.0 - 0.38 * roundness),
        "eye_ry": identity["eye_ry"] * (0.22 + 0.78 * eye_open),
        "mouth_open": float(mouth_open),
    }


_GRID_Y, _GRID_X = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE].astype(np.float32)


def _ellipse_alpha(cx, cy, rx, ry, soft: float = 1.0):
    rho = np.sqrt(((_GRID_X - cx) / rx) ** 2 + ((_GRID_Y - cy) / ry) ** 2)
    d_px = (1.0 - rho) * min(float(np.min(rx)) if np.ndim(rx) else rx,
                             float(np.min(ry)) if np.ndim(ry) else ry)
    return np.clip(0.5 + d_px / soft, 0.0, 1.0)


def _box_alpha(cx, cy, half_len, half_thick, angle_deg):
    th = np.deg2rad(angle_deg)
    u = (_GRID_X - cx) * np.cos(th) + (_GRID_Y - cy) * np.sin(th)
    w = -(_GRID_X - cx) * np.sin(th) + (_GRID_Y - cy) * np.cos(th)
    d = np.minimum(half_len - np.abs(u), half_thick - np.abs(w))
    return np.clip(0.5 + d, 0.0, 1.0)


def _paint(img, alpha, color):
    img += alpha[..., None] * (color - img)


def render_face(identity: dict, geo: dict) -> np.ndarray:
    """Draw one frame from its geometry; returns [64, 64, 3] float32."""
    img = np.empty((FRAME_SIZE, FRAME_SIZE, 3), dtype=np.float32)
    img[:] = np.asarray(identity["bg"], dtype=np.float32)
    cx, cy = geo["head_cx"], geo["head_cy"]
    _paint(img, _ellipse_alpha(cx, cy, identity["head_rx"], identity["head_ry"]),
           np.asarray(identity["skin"], dtype=np.float32))

    eye_y = geo["head_cy"] - 33.0 + identity["eye_y"]
    for side in (-1.0, 1.0):
        ex = cx + side * identity["eye_dx"]
        _paint(img, _ellipse_alpha(ex, eye_y, identity["eye_rx"], max(geo["eye_ry"], 0.45)), _SCLERA)
        _paint(img, _ellipse_alpha(ex, eye_y, identity["eye_rx"] * 0.42,
                                   max(geo["eye_ry"] * 0.62, 0.35)), _PUPIL)
        brow_y = eye_y - 4.5 - geo["brow_lift_px"]
        _paint(img, _box_alpha(ex, brow_y, identity["brow_len"] / 2, 0.9,
                               side * geo["brow_angle_deg"]), _BROW_COLOR)

    mouth_y = geo["head_cy"] - 33.0 + identity["mouth_y"]
    rx = geo["mouth_rx"]
    ap = geo["mouth_ap_ry"]
    # curved centerline: corners stay put, the middle bows with valence
    dx = np.clip((_GRID_X - cx) / rx, -1.0, 1.0)
    cy_line = mouth_y + geo["mouth_curve_px"] * (1.0 - dx**2)
    _paint(img, _ellipse_alpha(cx, cy_line, rx * 1.18, ap + 1.7), _LIP_COLOR)
    _paint(img, _ellipse_alpha(cx, cy_line, rx * 0.92, np.maximum(ap, 1e-3)), _MOUTH_INTERIOR)
    return img


# ---------------------------------------------------------------------------
# motion templates

def _pulse_train(rng, L, period_s, jitter_s, pulse_fn):
    """Sum of events tiling the clip; pulse_fn(t, t0) -> track contribution."""
    t = np.arange(L) / FPS
    out = np.zeros(L)
    t0 = rng.uniform(0.2, max(period_s, 0.4))
    while t0 < L / FPS + period_s:
        out += pulse_fn(t, t0)
        t0 += period_s + rng.uniform(-jitter_s, jitter_s)
    return out


def _gauss(t, t0, sigma):
    return np.exp(-0.5 * ((t - t0) / sigma) ** 2)


def _smooth_noise(rng, L, sigma_frames):
    x = gaussian_filter1d(rng.standard_normal(L + 40), sigma_frames)[20:-20]
    s = x.std()
    return x / s if s > 1e-8 else x


def _tracks_speech(rng, L):
    fast = _smooth_noise(rng, L, 2.5)    # ~100 ms correlation
    slow = _smooth_noise(rng, L, 10.0)   # ~400 ms correlation
    m = np.clip(0.45 + 0.28 * (0.78 * fast + 0.55 * slow), 0.02, 0.98)
    return {"mouth": m, "env": m.copy()}


def _tracks_laughter(rng, L):
    t = np.arange(L) / FPS
    f = rng.uniform(4.2, 5.8)
    phase = rng.uniform(0, 2 * np.pi)
    slow = 0.5 + 0.5 * _smooth_noise(rng, L, 12.0) * 0.35
    m = np.clip(0.18 + 0.16 * slow + 0.42 * (0.5 + 0.5 * np.sin(2 * np.pi * f * t + phase)), 0, 1)
    bob = 0.5 * np.sin(2 * np.pi * (f / 2) * t + phase / 2)
    return {"mouth": m, "bob": bob, "env": m.copy(), "burst_hz": f}


def _tracks_yawn(rng, L):
    def pulse(t, t0):
        ramp_in = np.clip((t - t0) / 1.2, 0, 1)
        ramp_out = np.clip((t0 + 2.2 - t) / 1.0, 0, 1)
        return np.clip(np.minimum(ramp_in, ramp_out), 0, 1)
    env = np.clip(_pulse_train(rng, L, 4.0, 0.4, pulse), 0, 1)
    env = gaussian_filter1d(env, 2.0)
    return {"mouth": 0.05 + 0.90 * env, "eye_close": 0.35 * env, "env": env}


def _tracks_cough(rng, L):
    def pulse(t, t0):
        return 0.85 * (_gauss(t, t0, 0.055) + _gauss(t, t0 + 0.24, 0.055))
    env = np.clip(_pulse_train(rng, L, 1.9, 0.3, pulse), 0, 1)
    return {"mouth": 0.07 + env * 0.88, "env": env}


def _tracks_sigh(rng, L):
    def cycle(t, t0):
        inhale = 0.25 * _gauss(t, t0, 0.25)
        rise = np.clip((t - t0 - 0.5) / 0.25, 0, 1)
        fall = np.exp(-np.clip(t - t0 - 0.75, 0, None) / 0.8)
        return inhale + 0.45 * rise * fall
    env = np.clip(_pulse_train(rng, L, 3.6, 0.4, cycle), 0, 1)
    eye = gaussian_filter1d(np.clip(env - 0.15, 0, None) * 1.4, 2.0)
    return {"mouth": 0.04 + env, "eye_close": np.clip(eye, 0, 0.6), "env": env}


def _tracks_throat_clear(rng, L):
    def pulse(t, t0):
        return 0.62 * (_gauss(t, t0, 0.04) + _gauss(t, t0 + 0.13, 0.04)
                       + _gauss(t, t0 + 0.26, 0.04))
    env = np.clip(_pulse_train(rng, L, 2.1, 0.3, pulse), 0, 1)
    return {"mouth": 0.06 + env * 0.8, "env": env}


def _tracks_mhm(rng, L):
    def pulse(t, t0):
        return _gauss(t, t0, 0.1) + _gauss(t, t0 + 0.32, 0.1)
    env = np.clip(_pulse_train(rng, L, 2.3, 0.35, pulse), 0, 1)
    def nod(t, t0):
        return -_gauss(t, t0 + 0.15, 0.18)
    bob = _pulse_train(np.random.default_rng(rng.integers(1 << 31)), L, 2.3, 0.0, nod)
    return {"mouth": 0.03 + 0.16 * env, "bob": np.clip(bob, -1, 0), "env": env}


def _tracks_oh(rng, L):
    def pulse(t, t0):
        return np.clip(np.minimum((t - t0) / 0.18, (t0 + 0.75 - t) / 0.18), 0, 1)
    env = np.clip(_pulse_train(rng, L, 2.0, 0.3, pulse), 0, 1)
    return {"mouth": 0.04 + 0.52 * env, "roundness": env, "env": env}


def _tracks_ah(rng, L):
    def pulse(t, t0):
        return np.clip(np.minimum((t - t0) / 0.12, (t0 + 0.6 - t) / 0.12), 0, 1)
    env = np.clip(_pulse_train(rng, L, 2.0, 0.3, pulse), 0, 1)
    return {"mouth": 0.05 + 0.85 * env, "env": env}


_TEMPLATES = {
    "speech": _tracks_speech,
    "laughter": _tracks_laughter,
    "yawn": _tracks_yawn,
    "cough": _tracks_cough,
    "sigh": _tracks_sigh,
    "throat_clear": _tracks_throat_clear,
    "mhm": _tracks_mhm,
    "oh": _tracks_oh,
    "ah": _tracks_ah,
}


# ---------------------------------------------------------------------------
# audio feature synthesis

_RFF_RNG = np.random.default_rng(770011)
_RFF_W = _RFF_RNG.normal(0.0, 2.4, size=(AUDIO_DIM - 2, 3))
_RFF_B = _RFF_RNG.uniform(0.0, 2 * np.pi, size=AUDIO_DIM - 2)


def audio_w_features(mouth_open: np.ndarray) -> np.ndarray:
    """Fixed feature map of the mouth track with 3-frame context, [L, C_a].

    Channel 0 carries the aperture directly and channel 1 its central
    difference; the rest are fixed random-Fourier features of the context.
    """
    m = np.asarray(mouth_open, dtype=np.float64)
    pad = np.pad(m, 1, mode="edge")
    ctx = np.stack([pad[:-2], pad[1:-1], pad[2:]], axis=1)  # [L, 3]
    feats = np.empty((len(m), AUDIO_DIM), dtype=np.float32)
    feats[:, 0] = 2.0 * m - 1.0
    feats[:, 1] = np.clip(3.0 * (ctx[:, 2] - ctx[:, 0]), -1.0, 1.0)
    feats[:, 2:] = np.cos(ctx @ _RFF_W.T + _RFF_B)
    return feats


def audio_b_features(env: np.ndarray, nsv_label: str, rng) -> np.ndarray:
    """Log band magnitudes of a synthetic waveform, [L, C_a].

    The waveform is a class-specific carrier mixture amplitude-modulated by
    the clip's acoustic envelope, sampled at 400 Hz; each frame summarises an
    80 ms Hann window into 16 bands (12.5 Hz spacing, DC dropped).
    """
    L = len(env)
    n_samples = L * _SAMPLES_PER_FRAME + 64
    tau = np.arange(n_samples) / _AUDIO_SR
    env_up = np.interp(tau * FPS, np.arange(L) + 0.5, env)
    bands = _CLASS_BANDS[nsv_label]
    if bands is None:  # broadband speech carrier with per-clip band amps
        bands = tuple(range(2, 14))
        amps = rng.uniform(0.3, 1.0, len(bands))
    else:
        amps = np.ones(len(bands))
    wave = np.zeros(n_samples)
    for b, a in zip(bands, amps):
        f = b * _AUDIO_SR / 32.0  # rfft bin center for the 32-sample window
        wave += a * np.sin(2 * np.pi * f * tau + rng.uniform(0, 2 * np.pi))
    wave = wave * (0.25 + 0.75 * env_up) + 0.05 * rng.standard_normal(n_samples)
    win = np.hanning(32)
    out = np.empty((L, AUDIO_DIM), dtype=np.float32)
    for i in range(L):
        c = int((i + 0.5) * _SAMPLES_PER_FRAME) + 16
        seg = wave[c - 16:c + 16] * win
        spec = np.abs(np.fft.rfft(seg))[1:17]
        out[i] = np.log1p(spec)
    return out


# ---------------------------------------------------------------------------
# clip rendering

def render_clip(seed: int, duration_sec: float, emotion_curve: EmotionCurve | None = None,
                nsv_label: str = "speech") -> SynthClip:
    """Deterministically render one clip; same args -> identical arrays."""
    if duration_sec < 1.0:
        raise ValueError("duration must be at least 1 second")
    if nsv_label not in _TEMPLATES:
        raise ValueError(f"unknown nsv label {nsv_label!r}")
    L = int(round(duration_sec * FPS))
    identity = identity_params(seed)
    rng = np.random.default_rng([int(seed), 23])
    tracks = _TEMPLATES[nsv_label](rng, L)
    mouth = np.clip(np.asarray(tracks["mouth"], dtype=np.float64), 0.0, 1.0)
    bob = np.asarray(tracks.get("bob", np.zeros(L)), dtype=np.float64)
    roundness = np.asarray(tracks.get("roundness", np.zeros(L)), dtype=np.float64)
    eye_open = 1.0 - np.asarray(tracks.get("eye_close", np.zeros(L)), dtype=np.float64)
    env = np.clip(np.asarray(tracks.get("env", mouth), dtype=np.float64), 0, 1)

    if emotion_curve is None:
        emotion_curve = EmotionCurve([(0.0, 0.0, 0.0)])
    valence, arousal = emotion_curve.sample(L)

    frames = np.empty((L, 3, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    for i in range(L):
        geo = face_geometry(identity, mouth[i], valence[i], arousal[i],
                            roundness=roundness[i], bob=bob[i], eye_open=eye_open[i])
        frames[i] = render_face(identity, geo).transpose(2, 0, 1)

    audio_w = audio_w_features(mouth)
    audio_b = audio_b_features(env, nsv_label, np.random.default_rng([int(seed), 29]))
    aux = {"bob": bob, "roundness": roundness, "eye_open": eye_open, "env": env}
    if "burst_hz" in tracks:
        aux["burst_hz"] = tracks["burst_hz"]
    return SynthClip(frames=frames, audio_w=audio_w, audio_b=audio_b,
                     mouth_open=mouth.astype(np.float32),
                     valence=valence.astype(np.float32),
                     arousal=arousal.astype(np.float32),
                     nsv_label=nsv_label, identity_params=identity, aux=aux)


def random_emotion_curve(rng, duration_sec: float) -> EmotionCurve:
    n_kp = int(rng.integers(2, 5))
    times = np.sort(rng.uniform(0, duration_sec, n_kp))
    times += np.arange(n_kp) * 1e-3  # guard against duplicate draws
    pts = [(float(t), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))) for t in times]
    return EmotionCurve(pts)


# ---------------------------------------------------------------------------
# on-disk dataset

def write_audio_f32(path, arr: np.ndarray) -> None:
    """magic 'KFAU', u32 L, u32 C_a, u32 reserved (16-byte header), then f32 LE."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(AUDIO_MAGIC)
        f.write(struct.pack("<III", arr.shape[0], arr.shape[1], 0))
        f.write(arr.tobytes(order="C"))


def read_audio_f32(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != AUDIO_MAGIC:
        raise ValueError(f"{path}: bad audio magic {raw[:4]!r}")
    L, C, _ = struct.unpack("<III", raw[4:16])
    return np.frombuffer(raw[16:], dtype="<f4").reshape(L, C).copy()


def frames_to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)


def save_clip(clip: SynthClip, clip_dir) -> None:
    d = Path(clip_dir)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    u8 = frames_to_uint8(clip.frames)
    for i in range(clip.n_frames):
        Image.fromarray(u8[i].transpose(1, 2, 0)).save(d / "frames" / f"{i:04d}.png")
    write_audio_f32(d / "audio_w.f32", clip.audio_w)
    write_audio_f32(d / "audio_b.f32", clip.audio_b)
    labels = {
        "mouth_open": [round(float(x), 6) for x in clip.mouth_open],
        "valence": [round(float(x), 6) for x in clip.valence],
        "arousal": [round(float(x), 6) for x in clip.arousal],
        "nsv_label": clip.nsv_label,
        "identity_seed": clip.identity_params["seed"],
    }
    (d / "labels.json").write_text(json.dumps(labels, sort_keys=True))


def class_counts(n_clips: int, class_mix: dict) -> dict:
    """Exact per-class clip counts for a mix like {'speech': .6, 'nsv': .4}.

    Keys may name concrete classes; the pseudo-key "nsv" (and any mass left
    unassigned) spreads uniformly over the classes not named explicitly.
    """
    unknown = set(class_mix) - set(NSV_CLASSES) - {"nsv"}
    if unknown:
        raise ValueError(f"unknown classes in mix: {sorted(unknown)}")
    named = {c: f for c, f in class_mix.items() if c in NSV_CLASSES}
    if sum(named.values()) > 1.0 + 1e-9:
        raise ValueError("class mix fractions exceed 1")
    counts = {c: 0 for c in NSV_CLASSES}
    for c, f in named.items():
        counts[c] = int(round(n_clips * f))
    remaining = n_clips - sum(counts.values())
    rest = [c for c in NSV_CLASSES if c not in named]
    if remaining < 0 or (remaining > 0 and not rest):
        # rounding spill lands on the largest named class
        big = max(named, key=named.get)
        counts[big] += remaining
        remaining = 0
    base, extra = divmod(remaining, len(rest)) if rest else (0, 0)
    for i, c in enumerate(rest):
        counts[c] = base + (1 if i < extra else 0)
    return counts


def split_counts(n: int, ratios) -> list:
    """Exact split sizes that sum to n (largest-remainder rounding)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    raw = [n * r for r in ratios]
    base = [int(np.floor(x)) for x in raw]
    rem = n - sum(base)
    order = np.argsort([b - x for b, x in zip(base, raw)])  # largest remainder first
    for i in range(rem):
        base[order[i]] += 1
    return base


def build_dataset(root, n_clips: int, split_ratios=(0.8, 0.1, 0.1),
                  class_mix=None, duration_sec: float = 7.0, seed: int = 0,
                  progress=None) -> dict:
    """Render and write a dataset; returns the manifest dict.

    Layout: <root>/manifest.json plus one directory per clip with
    frames/NNNN.png, audio_w.f32, audio_b.f32 and labels.json. Deterministic
    given (n_clips, ratios, mix, duration, seed).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    class_mix = class_mix or {"speech": 0.6, "nsv": 0.4}
    counts = class_counts(n_clips, class_mix)
    labels = [c for c in NSV_CLASSES for _ in range(counts[c])]
    rng = np.random.default_rng([seed, 3])
    rng.shuffle(labels)

    names = ("train", "val", "test")
    sizes = split_counts(n_clips, split_ratios)
    splits = [names[j] for j, s in enumerate(sizes) for _ in range(s)]
    rng.shuffle(splits)

    entries = []
    for i, (label, split) in enumerate(zip(labels, splits)):
        clip_seed = seed * 1_000_003 + i
        curve = random_emotion_curve(np.random.default_rng([seed, 7, i]), duration_sec)
        clip = render_clip(clip_seed, duration_sec, curve, label)
        cid = f"clip_{i:04d}"
        save_clip(clip, root / cid)
        entries.append({
            "id": cid,
            "dir": cid,
            "nsv_label": label,
            "split": split,
            "duration_sec": duration_sec,
            "n_frames": clip.n_frames,
            "seed": clip_seed,
            "emotion_keypoints": [[round(x, 6) for x in kp] for kp in curve.keypoints],
        })
        if progress and (i + 1) % 25 == 0:
            progress(i + 1, n_clips)
    manifest = {
        "fps": FPS,
        "frame_size": FRAME_SIZE,
        "audio_dim": AUDIO_DIM,
        "seed": seed,
        "n_clips": n_clips,
        "class_counts": counts,
        "clips": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


class DatasetIndex:
    """Read-side view of an on-disk dataset."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest.json under {self.root}")
        self.manifest = json.loads(manifest_path.read_text())
        self.clips = self.manifest["clips"]
        self.by_id = {c["id"]: c for c in self.clips}

    def entries(self, split: str | None = None) -> list:
        if split is None:
            return list(self.clips)
        return [c for c in self.clips if c["split"] == split]

    def clip_dir(self, clip_id: str) -> Path:
        return self.root / self.by_id[clip_id]["dir"]

    def load_labels(self, clip_id: str) -> dict:
        d = json.loads((self.clip_dir(clip_id) / "labels.json").read_text())
        for k in ("mouth_open", "valence", "arousal"):
            d[k] = np.asarray(d[k], dtype=np.float32)
        return d

    def load_audio(self, clip_id: str):
        d = self.clip_dir(clip_id)
        return read_audio_f32(d / "audio_w.f32"), read_audio_f32(d / "audio_b.f32")

    def frame_path(self, clip_id: str, i: int) -> Path:
        return self.clip_dir(clip_id) / "frames" / f"{i:04d}.png"

    def load_frame(self, clip_id: str, i: int) -> np.ndarray:
        return load_frame_png(self.frame_path(clip_id, i))

    def load_frames(self, clip_id: str) -> np.ndarray:
        n = self.by_id[clip_id]["n_frames"]
        return np.stack([self.load_frame(clip_id, i) for i in range(n)])


def load_frame_png(path) -> np.ndarray:
    """PNG -> [3, H, W] float32 in [0, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def mouth_aperture_pixels(frame: np.ndarray) -> float:
    """Anti-aliased mouth-interior area, used as a lip-sync oracle.

    The interior is always composited over lip color, so each pixel's
    coverage is recovered by linear unmixing along the lip-to-interior color
    axis; the summed coverage equals the drawn area including the soft edge,
    which keeps the count linear even for sub-pixel apertures.
    """
    lower = frame[:, FRAME_SIZE // 2:, :].astype(np.float64)
    axis = (_MOUTH_INTERIOR - _LIP_COLOR).astype(np.float64)
    rel = lower - _LIP_COLOR[:, None, None].astype(np.float64)
    alpha = np.tensordot(axis, rel, axes=1) / (axis @ axis)
    resid = rel - alpha[None] * axis[:, None, None]
    on_axis = np.sqrt((resid**2).sum(axis=0)) < 0.15
    return float((np.clip(alpha, 0.0, 1.0) * on_axis).sum())
