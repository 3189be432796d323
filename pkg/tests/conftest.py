import numpy as np
import pytest
import torch

from orca.backbone import ToyBackend
from orca.encoders import ToyTextEncoder, ToyVisionEncoder


@pytest.fixture(scope="session", autouse=True)
def _torch_threads():
    torch.set_num_threads(2)


@pytest.fixture(scope="session")
def toy_backend():
    return ToyBackend()


@pytest.fixture(scope="session")
def text_encoder(toy_backend):
    return ToyTextEncoder(dim=toy_backend.descriptor.condition_dim,
                          max_len=toy_backend.descriptor.max_condition_len)


@pytest.fixture(scope="session")
def vision_encoder():
    return ToyVisionEncoder(image_size=64)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_frame(rng, size=64):
    """A quantized [0,1] frame like the renderer produces."""
    img = rng.random((size, size, 3), dtype=np.float32)
    return (np.round(img * 255).astype(np.uint8).astype(np.float32) / 255.0)
