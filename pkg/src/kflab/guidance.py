"""Guidance combinators wrapping the stage denoisers.

Keyframes default to split classifier-free guidance (separate audio and
identity scales); interpolation defaults to autoguidance against a reduced
checkpoint of the same architecture trained with 1/16 the steps. Plain CFG is
kept for the guidance ablation grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch

DEFAULT_W_AUD = 3.0
DEFAULT_W_ID = 2.33
DEFAULT_W_AUTO = 1.5

KINDS = ("split_cfg", "autoguidance", "plain_cfg", "none")


@dataclass
class GuidanceSpec:
    kind: str = "none"
    w_id: float = DEFAULT_W_ID
    w_aud: float = DEFAULT_W_AUD
    w_auto: float = DEFAULT_W_AUTO
    reduced_model: object = None  # denoiser_fn with the same signature

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown guidance kind {self.kind!r}")
        needed = {
            "split_cfg": (self.w_id, self.w_aud),
            "plain_cfg": (self.w_aud,),
            "autoguidance": (self.w_auto,),
            "none": (),
        }[self.kind]
        if any(not math.isfinite(w) for w in needed):
            raise ValueError(f"non-finite guidance weights for kind {self.kind}")
        if self.kind == "autoguidance" and self.reduced_model is None:
            raise ValueError("autoguidance requires a reduced model")


def split_cfg(z_null: torch.Tensor, z_id: torch.Tensor, z_id_aud: torch.Tensor,
              w_id: float, w_aud: float) -> torch.Tensor:
    """z = z_null + w_id * (z_id - z_null) + w_aud * (z_id_aud - z_id).

    Evaluated as an affine combination (coefficients sum to 1) so the
    w_id = w_aud = 1 telescoping collapse to z_id_aud is bit-exact.
    """
    if z_null.shape != z_id.shape or z_id.shape != z_id_aud.shape:
        raise ValueError("split_cfg branch shapes differ")
    return (1.0 - w_id) * z_null + (w_id - w_aud) * z_id + w_aud * z_id_aud


def autoguide(d_reduced: torch.Tensor, d_main: torch.Tensor, w_auto: float) -> torch.Tensor:
    """d = d_reduced + w_auto * (d_main - d_reduced).

    Evaluated in coefficient form so w_auto = 1 returns d_main bit-exactly.
    """
    if d_reduced.shape != d_main.shape:
        raise ValueError("autoguide branch shapes differ")
    return (1.0 - w_auto) * d_reduced + w_auto * d_main


def plain_cfg(z_uncond: torch.Tensor, z_cond: torch.Tensor, w: float) -> torch.Tensor:
    if z_uncond.shape != z_cond.shape:
        raise ValueError("plain_cfg branch shapes differ")
    return (1.0 - w) * z_uncond + w * z_cond


def guided_denoiser(denoiser_fn, spec: GuidanceSpec):
    """Wrap a conditional denoiser into a guided one for the sampler.

    `denoiser_fn(x, sigma, cond)` must honour the bundle's drop flags; the
    wrapper only rewrites those flags per branch, so emotion conditioning
    (never dropped) cancels out of the guidance arithmetic. Branches are run
    sequentially; it would be safe to parallelise them since each call is
    pure, but results must stay bit-identical to this ordering.
    """
    if spec.kind == "none":
        return denoiser_fn

    if spec.kind == "split_cfg":
        def fn(x, sigma, cond):
            z_null = denoiser_fn(x, sigma, replace(cond, drop_audio=True, drop_id=True))
            z_id = denoiser_fn(x, sigma, replace(cond, drop_audio=True, drop_id=False))
            z_id_aud = denoiser_fn(x, sigma, replace(cond, drop_audio=False, drop_id=False))
            return split_cfg(z_null, z_id, z_id_aud, spec.w_id, spec.w_aud)
        return fn

    if spec.kind == "plain_cfg":
        def fn(x, sigma, cond):
            z_uncond = denoiser_fn(x, sigma, replace(cond, drop_audio=True))
            z_cond = denoiser_fn(x, sigma, replace(cond, drop_audio=False))
            return plain_cfg(z_uncond, z_cond, spec.w_aud)
        return fn

    reduced = spec.reduced_model

    def fn(x, sigma, cond):
        d_main = denoiser_fn(x, sigma, cond)
        d_red = reduced(x, sigma, cond)
        return autoguide(d_red, d_main, spec.w_auto)
    return fn
