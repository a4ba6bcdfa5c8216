"""Shared fixtures: a small rendered dataset, a briefly trained codec, and a
factory for denoisers with randomized weights (fresh ones output exactly
c_skip * x because every residual branch ends zero-initialized, which hides
sensitivity to conditioning)."""

import bisect

import numpy as np
import pytest
import torch

from kflab.codec import train_codec
from kflab.denoiser import ConditionedDenoiser, DenoiserConfig
from kflab.synthworld import DatasetIndex, build_dataset


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    # 7 s clips: the keyframe stage needs (K-1)*(S+1)+1 = 170 source frames
    root = tmp_path_factory.mktemp("ds")
    build_dataset(root, 10, duration_sec=7.0, seed=11)
    return root


@pytest.fixture(scope="session")
def index(dataset_root):
    return DatasetIndex(dataset_root)


@pytest.fixture(scope="session")
def codec(index):
    clips = [e["id"] for e in index.entries("train")]
    counts = np.cumsum([index.by_id[c]["n_frames"] for c in clips])

    def provider(i):
        j = bisect.bisect_right(counts, i)
        fi = int(i - (counts[j - 1] if j else 0))
        return torch.from_numpy(index.load_frame(clips[j], fi))

    model, _ = train_codec(provider, int(counts[-1]), steps=60, batch=16, seed=0)
    return model


@pytest.fixture
def make_denoiser():
    def make(kind="keyframe", seed=0, scale=0.05, **cfg_over):
        torch.manual_seed(seed)
        cfg = None
        if cfg_over:
            from kflab import LATENT_CHANNELS
            want = 2 * LATENT_CHANNELS if kind == "keyframe" else 2 * LATENT_CHANNELS + 1
            cfg = DenoiserConfig(in_channels=want, **cfg_over)
        model = ConditionedDenoiser(kind, cfg)
        if scale:
            with torch.no_grad():
                for p in model.parameters():
                    p.add_(scale * torch.randn_like(p))
        return model

    return make
