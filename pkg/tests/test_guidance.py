"""Guidance arithmetic checked through affine-combination properties:
coefficients of each rule sum to 1, so constants pass through untouched and
the one-weights collapse to the fully conditional branch.
"""

import pytest
import torch

from kflab.guidance import (KINDS, GuidanceSpec, autoguide, guided_denoiser,
                            plain_cfg, split_cfg)


def test_kind_registry():
    assert KINDS == ("split_cfg", "autoguidance", "plain_cfg", "none")


def test_split_cfg_unit_weights_identity():
    g = torch.Generator().manual_seed(0)
    for _ in range(20):
        zn, zi, za = (torch.randn(3, 4, 5, generator=g) for _ in range(3))
        assert torch.equal(split_cfg(zn, zi, za, 1.0, 1.0), za)
        assert torch.equal(split_cfg(zn, zi, za, 1.0, 0.0), zi)


def test_split_cfg_constants_pass_through():
    # any affine combination with coefficients summing to 1 fixes constants
    g = torch.Generator().manual_seed(1)
    for _ in range(50):
        c = torch.randn(1, generator=g).expand(2, 3)
        w_id = float(torch.randn(1, generator=g)) * 3
        w_aud = float(torch.randn(1, generator=g)) * 3
        out = split_cfg(c.clone(), c.clone(), c.clone(), w_id, w_aud)
        assert torch.allclose(out, c, atol=1e-5)


def test_split_cfg_superposition():
    # f is affine: f(a + d, b, c) - f(a, b, c) must equal (1 - w_id) * d,
    # and similarly (w_id - w_aud) * d in b, w_aud * d in c.
    g = torch.Generator().manual_seed(2)
    for _ in range(100):
        zn, zi, za, d = (torch.randn(2, 6, generator=g) for _ in range(4))
        w_id = float(torch.rand(1, generator=g)) * 4
        w_aud = float(torch.rand(1, generator=g)) * 4
        base = split_cfg(zn, zi, za, w_id, w_aud)
        assert torch.allclose(split_cfg(zn + d, zi, za, w_id, w_aud) - base,
                              (1 - w_id) * d, atol=1e-4)
        assert torch.allclose(split_cfg(zn, zi + d, za, w_id, w_aud) - base,
                              (w_id - w_aud) * d, atol=1e-4)
        assert torch.allclose(split_cfg(zn, zi, za + d, w_id, w_aud) - base,
                              w_aud * d, atol=1e-4)


def test_plain_cfg_and_autoguide_lines():
    g = torch.Generator().manual_seed(3)
    for _ in range(50):
        a, b = torch.randn(2, 5, generator=g), torch.randn(2, 5, generator=g)
        assert torch.equal(plain_cfg(a, b, 1.0), b)
        assert torch.equal(autoguide(a, b, 1.0), b)
        w = float(torch.rand(1, generator=g)) * 5
        # both rules extrapolate along the (first -> second) line
        assert torch.allclose(plain_cfg(a, b, w), a + w * (b - a), atol=1e-5)
        assert torch.allclose(autoguide(a, b, w), a + w * (b - a), atol=1e-5)


def test_spec_validation():
    assert GuidanceSpec().kind == "none"
    with pytest.raises(ValueError):
        GuidanceSpec(kind="mystery")
    with pytest.raises(ValueError):
        GuidanceSpec(kind="autoguidance")  # no reduced model
    with pytest.raises(ValueError):
        GuidanceSpec(kind="split_cfg", w_id=float("nan"))
    GuidanceSpec(kind="autoguidance", reduced_model=lambda x, s, c: x)


def test_guided_denoiser_none_is_raw_fn():
    fn = lambda x, sigma, cond: x * 2
    assert guided_denoiser(fn, GuidanceSpec(kind="none")) is fn


def test_guided_denoiser_matches_hand_combination():
    # a denoiser that reacts to the drop flags lets us reconstruct each branch
    from dataclasses import replace

    from kflab.conditioning import ConditionBundle

    def fn(x, sigma, cond):
        out = x.clone()
        if not cond.drop_id:
            out = out + 1.0
        if not cond.drop_audio:
            out = out + 10.0
        return out

    cond = ConditionBundle(audio=torch.zeros(1, 2, 32),
                           id_latent=torch.zeros(1, 4, 16, 16),
                           valence=torch.zeros(1, 2), arousal=torch.zeros(1, 2))
    x = torch.zeros(1, 4, 2, 16, 16)

    spec = GuidanceSpec(kind="split_cfg", w_id=2.33, w_aud=3.0)
    got = guided_denoiser(fn, spec)(x, 1.0, cond)
    z_null, z_id, z_both = x, x + 1.0, x + 11.0
    want = z_null + 2.33 * (z_id - z_null) + 3.0 * (z_both - z_id)
    assert torch.allclose(got, want, atol=1e-6)

    spec = GuidanceSpec(kind="plain_cfg", w_aud=3.0)
    got = guided_denoiser(fn, spec)(x, 1.0, cond)
    # plain CFG toggles only the audio flag; the id flag rides through as-is
    z_un, z_c = fn(x, 1.0, replace(cond, drop_audio=True)), fn(x, 1.0, cond)
    assert torch.allclose(got, z_un + 3.0 * (z_c - z_un), atol=1e-6)

    reduced = lambda x_, s_, c_: x_ - 5.0
    spec = GuidanceSpec(kind="autoguidance", w_auto=1.5, reduced_model=reduced)
    got = guided_denoiser(fn, spec)(x, 1.0, cond)
    want = (x - 5.0) + 1.5 * ((x + 11.0) - (x - 5.0))
    assert torch.allclose(got, want, atol=1e-6)


def test_guided_denoiser_constant_field_fixed_point():
    # if every branch returns the same constant, any guidance returns it too
    from kflab.conditioning import ConditionBundle

    cond = ConditionBundle(audio=torch.zeros(1, 2, 32),
                           id_latent=torch.zeros(1, 4, 16, 16),
                           valence=torch.zeros(1, 2), arousal=torch.zeros(1, 2))
    c = torch.full((1, 4, 2, 16, 16), 0.7)
    fn = lambda x, sigma, cond_: c
    for spec in (GuidanceSpec(kind="split_cfg", w_id=2.33, w_aud=3.0),
                 GuidanceSpec(kind="plain_cfg", w_aud=3.0),
                 GuidanceSpec(kind="autoguidance", w_auto=1.5,
                              reduced_model=fn)):
        out = guided_denoiser(fn, spec)(torch.zeros_like(c), 1.0, cond)
        assert torch.allclose(out, c, atol=1e-6)
