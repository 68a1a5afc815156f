import numpy as np
import pytest
import scipy.ndimage as ndi
import torch

from hdrcodec import HdrImage, preprocess
from hdrcodec.model import HdrCodec
from hdrcodec.networks import NetworkConfig

torch.set_num_threads(2)

# desk-scale configs used across the suite
SMALL_CFG = NetworkConfig(
    base_channels=16,
    ldr_latent_channels=24,
    hdr_latent_channels=12,
    hyper_channels=8,
    embed_dim=32,
)
TINY_CFG = NetworkConfig(
    base_channels=8,
    ldr_latent_channels=8,
    hdr_latent_channels=6,
    hyper_channels=4,
    embed_dim=16,
)


def smooth_hdr(rng: np.random.Generator, h: int = 64, w: int = 64) -> HdrImage:
    """Random piecewise-smooth radiance image with positive pixels."""
    small = rng.random((max(h // 8, 1) + 2, max(w // 8, 1) + 2, 3))
    big = ndi.zoom(small, (h / small.shape[0], w / small.shape[1], 1), order=1)
    big = np.clip(big[:h, :w], 1e-5, None)
    return HdrImage(big * 10.0 ** rng.uniform(-0.5, 0.5))


def smooth_batch(rng, n, h=64, w=64):
    return [preprocess(smooth_hdr(rng, h, w)) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    torch.manual_seed(0)
    return HdrCodec(SMALL_CFG).eval()


@pytest.fixture(scope="session")
def tiny_model():
    torch.manual_seed(1)
    return HdrCodec(TINY_CFG).eval()
