import numpy as np
import pytest
import torch

from daf3d.head import tiny_config
from daf3d.volume_data import PhantomSpec, synth_phantom


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom():
    return synth_phantom(PhantomSpec(seed=11))


@pytest.fixture
def tiny():
    return tiny_config()


def random_mask(rng, shape, p=None):
    p = rng.uniform(0.2, 0.7) if p is None else p
    return (rng.random(shape) < p).astype(np.uint8)
