"""Denoiser structure: parameter budgets, zero-init behavior, conditioning
sensitivity, and the stage-specific input assembly."""

import pytest
import torch

from kflab.conditioning import ConditionBundle
from kflab.denoiser import (ConditionedDenoiser, DenoiserConfig, load_denoiser,
                            param_count, save_denoiser)
from kflab.diffusion import denoise, edm_scalings


def _kf_cond(l=6, seed=0, emotion=True):
    g = torch.Generator().manual_seed(seed)
    kw = {}
    if emotion:
        kw = dict(valence=torch.rand(l, generator=g) * 2 - 1,
                  arousal=torch.rand(l, generator=g) * 2 - 1)
    return ConditionBundle(audio=torch.randn(l, 32, generator=g),
                           id_latent=torch.randn(4, 16, 16, generator=g), **kw)


def _win_cond(l=6, seed=0, kind="interp"):
    g = torch.Generator().manual_seed(seed)
    if kind == "interp":
        ends = (torch.randn(4, 16, 16, generator=g), torch.randn(4, 16, 16, generator=g))
    else:
        ends = tuple(torch.randn(4, 16, 16, generator=g) for _ in range(2))
    return ConditionBundle(audio=torch.randn(l, 32, generator=g), endpoints=ends)


def test_parameter_budgets():
    assert param_count(ConditionedDenoiser("keyframe")) == 364_612
    assert param_count(ConditionedDenoiser("interp")) == 365_192
    assert param_count(ConditionedDenoiser("ar")) == 365_192
    for over, want in ((dict(audio_cross_attention=False), 351_748),
                       (dict(audio_timestep_shift=False), 358_340),
                       (dict(temporal_attention=False), 347_652)):
        cfg = DenoiserConfig(in_channels=8, **over)
        assert param_count(ConditionedDenoiser("keyframe", cfg)) == want


def test_kind_and_channel_validation():
    with pytest.raises(ValueError):
        ConditionedDenoiser("upsampler")
    with pytest.raises(ValueError):
        ConditionedDenoiser("keyframe", DenoiserConfig(in_channels=9))
    with pytest.raises(ValueError):
        ConditionedDenoiser("interp", DenoiserConfig(in_channels=8))
    assert hasattr(ConditionedDenoiser("interp"), "slot_fill")
    assert hasattr(ConditionedDenoiser("ar"), "slot_fill")
    assert not hasattr(ConditionedDenoiser("keyframe"), "slot_fill")


def test_fresh_model_is_pure_skip():
    # every residual branch ends zero-initialized, so a fresh model's F term
    # vanishes and denoise collapses to c_skip * x for any conditioning.
    model = ConditionedDenoiser("keyframe")
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(1))
    for sigma in (0.05, 1.0, 80.0):
        got = denoise(model, x, sigma, _kf_cond())
        s = edm_scalings(torch.tensor(sigma))
        assert torch.allclose(got, s.c_skip * x, atol=1e-6)


def test_audio_sensitivity_and_dropout(make_denoiser):
    model = make_denoiser("keyframe", seed=3)
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(2))
    c1, c2 = _kf_cond(seed=10), _kf_cond(seed=10)
    c2.audio = c2.audio + 1.0
    with torch.no_grad():
        base = model(x, torch.zeros(6), c1)
        moved = model(x, torch.zeros(6), c2)
    assert float((base - moved).abs().max()) > 1e-4

    # drop_audio must erase all audio influence, not just attenuate it
    from dataclasses import replace
    with torch.no_grad():
        d1 = model(x, torch.zeros(6), replace(c1, drop_audio=True))
        d2 = model(x, torch.zeros(6), replace(c2, drop_audio=True))
    assert torch.equal(d1, d2)


def test_audio_pathways_ablate_independently(make_denoiser):
    # with both audio mechanisms compiled out, the model cannot see audio
    model = make_denoiser("keyframe", seed=4, audio_cross_attention=False,
                          audio_timestep_shift=False)
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(5))
    c1, c2 = _kf_cond(seed=11), _kf_cond(seed=11)
    c2.audio = c2.audio * -2.0
    with torch.no_grad():
        assert torch.equal(model(x, torch.zeros(6), c1), model(x, torch.zeros(6), c2))
    # either pathway alone restores sensitivity
    for over in (dict(audio_cross_attention=False),
                 dict(audio_timestep_shift=False)):
        m = make_denoiser("keyframe", seed=4, **over)
        with torch.no_grad():
            a = m(x, torch.zeros(6), c1)
            b = m(x, torch.zeros(6), c2)
        assert float((a - b).abs().max()) > 1e-5


def test_identity_dropout(make_denoiser):
    model = make_denoiser("keyframe", seed=6)
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(7))
    c1, c2 = _kf_cond(seed=12), _kf_cond(seed=12)
    c2.id_latent = c2.id_latent + 2.0
    from dataclasses import replace
    with torch.no_grad():
        assert not torch.equal(model(x, torch.zeros(6), c1),
                               model(x, torch.zeros(6), c2))
        assert torch.equal(model(x, torch.zeros(6), replace(c1, drop_id=True)),
                           model(x, torch.zeros(6), replace(c2, drop_id=True)))


def test_emotion_conditions_keyframe_stage(make_denoiser):
    model = make_denoiser("keyframe", seed=8)
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(9))
    with_e = _kf_cond(seed=13, emotion=True)
    v2 = ConditionBundle(audio=with_e.audio, id_latent=with_e.id_latent,
                         valence=-with_e.valence, arousal=with_e.arousal)
    with torch.no_grad():
        assert not torch.equal(model(x, torch.zeros(6), with_e),
                               model(x, torch.zeros(6), v2))


def test_temporal_attention_mixes_frames(make_denoiser):
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(10))
    bumped = x.clone()
    bumped[:, 0] += 1.0
    cond = _win_cond(seed=14)
    with_mix = make_denoiser("interp", seed=15)
    with torch.no_grad():
        da = with_mix(x, torch.zeros(6), cond)
        db = with_mix(bumped, torch.zeros(6), cond)
    assert float((da - db)[:, 1:].abs().max()) > 1e-6

    # without temporal layers frames are processed independently, so a bump
    # to frame 0 cannot reach any other frame's output
    frozen = make_denoiser("interp", seed=15, temporal_attention=False)
    with torch.no_grad():
        da = frozen(x, torch.zeros(6), cond)
        db = frozen(bumped, torch.zeros(6), cond)
    assert torch.equal(da[:, 1:], db[:, 1:])
    assert not torch.equal(da[:, 0], db[:, 0])


def test_slot_fill_feeds_window_kinds(make_denoiser):
    model = make_denoiser("interp", seed=16)
    x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(11))
    cond = _win_cond(seed=17)
    with torch.no_grad():
        before = model(x, torch.zeros(6), cond)
        model.slot_fill.add_(1.0)
        after = model(x, torch.zeros(6), cond)
    assert not torch.equal(before, after)


def test_audio_length_validation(make_denoiser):
    model = make_denoiser("keyframe", seed=18)
    x = torch.randn(4, 6, 16, 16)
    cond = _kf_cond(l=5, seed=19)
    with pytest.raises(ValueError):
        model(x, torch.zeros(6), cond)


def test_save_load_roundtrip(tmp_path, make_denoiser):
    for kind in ("keyframe", "interp", "ar"):
        model = make_denoiser(kind, seed=20)
        path = tmp_path / f"{kind}.pt"
        save_denoiser(model, path)
        back = load_denoiser(path)
        assert back.kind == kind
        assert back.cfg == model.cfg
        x = torch.randn(4, 6, 16, 16, generator=torch.Generator().manual_seed(12))
        cond = _kf_cond(seed=21) if kind == "keyframe" else _win_cond(seed=21, kind=kind)
        with torch.no_grad():
            assert torch.equal(model(x, torch.zeros(6), cond),
                               back(x, torch.zeros(6), cond))


def test_batched_matches_stacked_unbatched(make_denoiser):
    model = make_denoiser("keyframe", seed=22)
    g = torch.Generator().manual_seed(13)
    xs = [torch.randn(4, 6, 16, 16, generator=g) for _ in range(2)]
    conds = [_kf_cond(seed=s) for s in (30, 31)]
    batched_cond = ConditionBundle(
        audio=torch.stack([c.audio for c in conds]),
        id_latent=torch.stack([c.id_latent for c in conds]),
        valence=torch.stack([c.valence for c in conds]),
        arousal=torch.stack([c.arousal for c in conds]))
    with torch.no_grad():
        out_b = model(torch.stack(xs), torch.zeros(2, 6), batched_cond)
        singles = [model(x, torch.zeros(6), c) for x, c in zip(xs, conds)]
    assert torch.allclose(out_b, torch.stack(singles), atol=1e-5)
