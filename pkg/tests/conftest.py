import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_channels():
    return (4, 8, 8, 8)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_prob_map(rng, h, w, k=2):
    """Valid probability field: positive entries, rows summing to one."""
    raw = rng.random((h, w, k)) + 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


def make_tiny_dataset(n=12, size=24, seed=0, noise=0.1, contrast=0.5):
    from crseg.data import SyntheticConfig, generate
    cfg = SyntheticConfig(image_size=(size, size), n_images=n, kind="ellipse",
                          contrast=contrast, noise_sigma=noise,
                          area_range=(0.05, 0.3), seed=seed)
    return generate(cfg)
