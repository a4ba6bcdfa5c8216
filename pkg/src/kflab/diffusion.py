"""EDM-style diffusion core: preconditioning, noise schedule, Euler sampler.

The denoiser is parameterised as

    D(x, sigma) = c_skip(sigma) * x + c_out(sigma) * F(c_in(sigma) * x; c_noise)

with the usual variance-preserving scalings derived from sigma_data. The
sampler integrates the probability-flow ODE with plain (churn-free) Euler
steps over a Karras rho-spaced sigma grid, so sampling is deterministic given
the initial noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

SIGMA_DATA = 0.5
SIGMA_MIN = 0.002
SIGMA_MAX = 80.0
RHO = 7.0
P_MEAN = -1.2
P_STD = 1.2
N_SAMPLE_STEPS = 10


@dataclass
class EdmScalings:
    c_skip: torch.Tensor
    c_out: torch.Tensor
    c_in: torch.Tensor
    c_noise: torch.Tensor


@dataclass
class NoiseSchedule:
    """Decreasing sigma grid; sigmas has n_steps + 1 entries ending in 0."""

    sigmas: torch.Tensor

    @property
    def n_steps(self) -> int:
        return len(self.sigmas) - 1


def edm_scalings(sigma, sigma_data: float = SIGMA_DATA) -> EdmScalings:
    sigma = torch.as_tensor(sigma, dtype=torch.float32) if not torch.is_tensor(sigma) else sigma
    if not torch.all(sigma > 0):
        raise ValueError("edm_scalings requires sigma > 0")
    var = sigma**2 + sigma_data**2
    return EdmScalings(
        c_skip=sigma_data**2 / var,
        c_out=sigma * sigma_data / var.sqrt(),
        c_in=1.0 / var.sqrt(),
        c_noise=sigma.log() / 4.0,
    )


def loss_weight(sigma, sigma_data: float = SIGMA_DATA):
    """lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2."""
    sigma = torch.as_tensor(sigma) if not torch.is_tensor(sigma) else sigma
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def sample_training_sigma(n: int, generator=None, p_mean: float = P_MEAN,
                          p_std: float = P_STD) -> torch.Tensor:
    """Log-normal training noise levels: sigma = exp(p_mean + p_std * N(0,1))."""
    z = torch.randn(n, generator=generator)
    return torch.exp(p_mean + p_std * z)


def build_schedule(n_steps: int = N_SAMPLE_STEPS, sigma_min: float = SIGMA_MIN,
                   sigma_max: float = SIGMA_MAX, rho: float = RHO) -> NoiseSchedule:
    """Karras rho-spaced grid from sigma_max down to sigma_min, 0 appended.

    Endpoints are assigned exactly; the power formula only reproduces them to
    ~1e-14 and downstream tests compare them with ==.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not (0 < sigma_min < sigma_max):
        raise ValueError("need 0 < sigma_min < sigma_max")
    sigmas = torch.empty(n_steps + 1, dtype=torch.float64)
    sigmas[0] = sigma_max
    if n_steps > 1:
        lo, hi = sigma_min ** (1 / rho), sigma_max ** (1 / rho)
        for i in range(1, n_steps - 1):
            sigmas[i] = (hi + i / (n_steps - 1) * (lo - hi)) ** rho
        sigmas[n_steps - 1] = sigma_min
    sigmas[n_steps] = 0.0
    return NoiseSchedule(sigmas=sigmas)


def denoise(net, x: torch.Tensor, sigma, cond=None) -> torch.Tensor:
    """Apply the preconditioned denoiser. `net(x_in, c_noise, cond) -> F`.

    sigma may be a scalar or a per-sample tensor of shape [B]; it is
    broadcast over the remaining dimensions of x.
    """
    s = edm_scalings(sigma)
    c_skip = _expand(s.c_skip, x)
    c_out = _expand(s.c_out, x)
    c_in = _expand(s.c_in, x)
    f = net(c_in * x, s.c_noise, cond)
    if not torch.isfinite(f).all():
        raise FloatingPointError("denoiser network produced non-finite values")
    return c_skip * x + c_out * f


def euler_sample(denoiser_fn, init_noise: torch.Tensor, schedule: NoiseSchedule,
                 cond=None) -> torch.Tensor:
    """Deterministic Euler integration of the probability-flow ODE.

    `denoiser_fn(x, sigma, cond)` must return the denoised estimate D(x, sigma).
    `init_noise` is already scaled by the caller (typically sigma_max * N(0,1)).
    """
    x = init_noise
    sigmas = schedule.sigmas.to(init_noise.dtype)
    for i in range(schedule.n_steps):
        sig, sig_next = sigmas[i], sigmas[i + 1]
        denoised = denoiser_fn(x, sig, cond)
        if not torch.isfinite(denoised).all():
            raise FloatingPointError(f"non-finite denoiser output at sampler step {i}")
        d = (x - denoised) / sig
        x = x + (sig_next - sig) * d
    return x


def timestep_positions(sigma) -> torch.Tensor:
    """c_noise values used as sinusoid positions by the conditioning module."""
    return edm_scalings(sigma).c_noise


def _expand(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))
